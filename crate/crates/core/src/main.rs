fn main() {
    std::process::exit(pnp_dse::cli::run(std::env::args_os()));
}
