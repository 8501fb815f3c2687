fn main() {
    std::process::exit(gridshed::cli::run_from(std::env::args_os()));
}
