fn main() {
    std::process::exit(clinreason_cli::run());
}
