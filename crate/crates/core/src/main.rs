fn main() {
    std::process::exit(fredholm::cli::run(std::env::args_os()));
}
