use clap::Parser;
use divprompt_server::{serve, ServeArgs};

#[derive(Parser)]
#[command(name = "divprompt-server", version, about = "HTTP API for attribute-diversified image sessions")]
struct Cli {
    #[command(flatten)]
    serve: ServeArgs,
}

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    if let Err(e) = serve(&cli.serve).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
