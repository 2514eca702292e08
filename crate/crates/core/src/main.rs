fn main() {
    std::process::exit(waveflow::cli::run(std::env::args_os()));
}
