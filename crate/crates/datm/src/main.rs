fn main() {
    std::process::exit(datm::cli::run(std::env::args_os()));
}
