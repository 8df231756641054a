fn main() {
    std::process::exit(twophase::cli::run(std::env::args_os()));
}
