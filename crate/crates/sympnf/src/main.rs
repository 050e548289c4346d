fn main() {
    std::process::exit(sympnf::cli::run());
}
