fn main() {
    std::process::exit(vgnet::cli::run(std::env::args_os()));
}
