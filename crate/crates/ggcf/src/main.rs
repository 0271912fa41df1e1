fn main() {
    std::process::exit(ggcf::cli::run());
}
