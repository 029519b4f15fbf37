fn main() {
    std::process::exit(captionlab::cli::run(std::env::args_os()));
}
