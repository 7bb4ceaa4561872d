//! Sends one request to a gateway's client endpoint and prints the reply.

use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use flexsmc_cli::init_logging;
use flexsmc_client::{ClientError, GatewayClient};
use flexsmc_node::net::TcpNetwork;

#[derive(Parser)]
#[command(about = "Query a FlexSMC gateway")]
struct Args {
    /// The gateway's client endpoint, host:port.
    #[arg(long)]
    gateway: String,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    #[command(subcommand)]
    call: Call,
}

#[derive(Subcommand)]
enum Call {
    /// Groups, peer fingerprints and capabilities currently available.
    Catalog,
    Query {
        #[arg(long)]
        group: String,
        /// sum or average.
        #[arg(long, default_value = "sum")]
        operation: String,
        #[arg(long = "data-type")]
        data_type: String,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let args = Args::parse();
    let client = GatewayClient::connect(Arc::new(TcpNetwork::new()), &args.gateway)
        .await?
        .with_timeout(Duration::from_secs(args.timeout_secs));
    let reply = match &args.call {
        Call::Catalog => client.catalog().await.map(|c| serde_json::to_value(c).expect("catalogs serialize")),
        Call::Query {
            group,
            operation,
            data_type,
        } => client
            .query(group, operation, data_type)
            .await
            .map(|r| serde_json::to_value(r).expect("results serialize")),
    };
    match reply {
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v)?),
        Err(ClientError::Gateway(e)) => {
            println!("{}", serde_json::to_string_pretty(&e)?);
            std::process::exit(2);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
