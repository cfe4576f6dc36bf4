fn main() {
    std::process::exit(knight_core::cli::run(std::env::args_os()));
}
