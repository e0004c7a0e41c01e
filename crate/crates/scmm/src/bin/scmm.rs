fn main() {
    std::process::exit(scmm::cli::run(std::env::args_os()));
}
