fn main() {
    std::process::exit(privmarket::cli::run());
}
