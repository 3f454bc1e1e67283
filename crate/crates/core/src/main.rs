fn main() {
    std::process::exit(proplimit::cli::run(std::env::args_os()));
}
