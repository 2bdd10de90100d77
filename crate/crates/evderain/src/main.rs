fn main() {
    std::process::exit(evderain::cli::run(std::env::args_os()));
}
