fn main() {
    std::process::exit(spectrakan::cli::run(std::env::args_os()));
}
