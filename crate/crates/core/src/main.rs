fn main() {
    std::process::exit(pfpp::cli::run(std::env::args_os()));
}
