fn main() {
    std::process::exit(cvarsynth::cli::run(std::env::args_os()));
}
