fn main() {
    std::process::exit(eob_teleop::cli::run(std::env::args_os()));
}
