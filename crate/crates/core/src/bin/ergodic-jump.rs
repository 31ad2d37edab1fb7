fn main() {
    std::process::exit(ergodic_jump::cli::run(std::env::args_os()));
}
