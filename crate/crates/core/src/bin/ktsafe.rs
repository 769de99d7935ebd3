fn main() {
    std::process::exit(ktsafe::cli::run(std::env::args_os()));
}
