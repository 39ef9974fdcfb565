fn main() {
    std::process::exit(sedge_core::cli::run());
}
