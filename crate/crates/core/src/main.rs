use clap::Parser;

fn main() {
    let cli = kmgl::cli::Cli::parse();
    std::process::exit(kmgl::cli::run(cli));
}
