fn main() {
    std::process::exit(feratt::cli::run(std::env::args_os()));
}
