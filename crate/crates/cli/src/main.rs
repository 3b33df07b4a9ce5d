use clap::Parser;

fn main() -> std::process::ExitCode {
    nvsic_cli::run(nvsic_cli::Cli::parse())
}
