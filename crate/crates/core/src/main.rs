fn main() {
    std::process::exit(sssl::cli::run(std::env::args_os()));
}
