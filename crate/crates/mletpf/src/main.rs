fn main() {
    std::process::exit(mletpf::harness::cli_main(std::env::args()));
}
