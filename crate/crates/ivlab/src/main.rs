fn main() {
    std::process::exit(ivlab::cli::run());
}
