fn main() {
    std::process::exit(membench::cli::run());
}
