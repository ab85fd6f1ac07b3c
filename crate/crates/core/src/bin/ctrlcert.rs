fn main() {
    std::process::exit(ctrlcert::cli::run(std::env::args_os()));
}
