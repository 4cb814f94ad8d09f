fn main() {
    std::process::exit(falconwing::cli::run(std::env::args_os()));
}
