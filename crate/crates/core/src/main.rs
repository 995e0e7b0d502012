fn main() {
    std::process::exit(mqgm::cli::run(std::env::args_os()));
}
