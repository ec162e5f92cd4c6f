fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(riskbound::cli::run(&argv));
}
