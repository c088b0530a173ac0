fn main() {
    std::process::exit(cpop::cli::run());
}
