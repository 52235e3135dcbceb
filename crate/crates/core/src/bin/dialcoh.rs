fn main() {
    std::process::exit(dialcoh::cli::run(std::env::args_os()));
}
