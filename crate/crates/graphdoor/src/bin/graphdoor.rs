fn main() {
    std::process::exit(graphdoor::cli::run());
}
