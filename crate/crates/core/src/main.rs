fn main() {
    std::process::exit(promptsearch::cli::run(std::env::args_os()));
}
