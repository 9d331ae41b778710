fn main() {
    std::process::exit(copinet::cli::run(std::env::args_os()));
}
