fn main() {
    std::process::exit(rank2geo::cli::run());
}
