use std::io::{BufRead, Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bargain_core::domain::{Product, Session};
use bargain_core::engine::{Engine, EngineConfig};
use bargain_core::extractor::{parse_expressions, resolve};
use bargain_core::harness::{self, BatchConfig};
use bargain_core::money::Money;
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "bargain", version, about = "Seller-side bargaining agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded self-play episodes for every config label.
    Simulate {
        /// Batch config JSON; the six ablation rows when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory; defaults to runs/seed<S>-n<N>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the report from a transcripts.jsonl file.
    Eval {
        transcripts: PathBuf,
        /// Write report.json and report.csv here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read {"text", "product", "seller_offers"} JSON on stdin and print the extraction.
    Extract,
    /// Bargain with the agent from the terminal.
    Play {
        /// Engine config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Product JSON; a demo product when omitted.
        #[arg(long)]
        product: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "BARGAIN_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Engine config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "BARGAIN_DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
        /// Directory with the browser playground bundle, served at `/`.
        #[arg(long, default_value = "ui/dist")]
        static_dir: PathBuf,
        /// Require `Authorization: Bearer <token>` on session routes.
        #[arg(long, env = "BARGAIN_API_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_engine(config: Option<&Path>) -> Result<Engine> {
    let config = match config {
        Some(path) => EngineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => EngineConfig::default(),
    };
    Ok(Engine::new(config)?)
}

fn with_product_defaults(mut value: Value, id: &str) -> Value {
    if let Some(obj) = value.as_object_mut() {
        obj.entry("id").or_insert_with(|| Value::String(id.to_string()));
        obj.entry("title").or_insert_with(|| Value::String(String::new()));
    }
    value
}

#[derive(Deserialize)]
struct ExtractInput {
    text: String,
    product: Value,
    #[serde(default)]
    seller_offers: Vec<Money>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            episodes,
            seed,
            out,
        } => {
            let batch = match &config {
                Some(path) => BatchConfig::load(path)?,
                None => BatchConfig::default(),
            };
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/seed{seed}-n{episodes}")));
            let output = harness::run_batch(&batch.configs, &batch.profiles, episodes, seed)?;
            harness::write_batch(&out, &output)?;
            print!("{}", harness::report_csv(&output.reports)?);
            eprintln!("wrote {}", out.display());
        }
        Command::Eval { transcripts, out } => {
            let records = harness::read_transcripts(&transcripts)?;
            let reports = harness::reports_from_transcripts(&records);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("report.json"), harness::report_json(&reports)?)?;
                    std::fs::write(dir.join("report.csv"), harness::report_csv(&reports)?)?;
                }
                None => print!("{}", harness::report_json(&reports)?),
            }
        }
        Command::Extract => {
            let mut input = String::new();
            std::io::stdin().read_to_string(&mut input)?;
            let input: ExtractInput = serde_json::from_str(&input).context("parsing stdin")?;
            let product: Product = serde_json::from_value(with_product_defaults(input.product, "stdin"))
                .context("parsing product")?;
            product.validate()?;
            let extraction = resolve(
                &parse_expressions(&input.text),
                &product,
                &input.seller_offers,
                &Default::default(),
            )?;
            println!("{}", serde_json::to_string_pretty(&extraction)?);
        }
        Command::Play {
            config,
            product,
            seed,
        } => play(load_engine(config.as_deref())?, product.as_deref(), seed)?,
        Command::Serve {
            port,
            host,
            config,
            data_dir,
            static_dir,
            token,
        } => {
            let engine = load_engine(config.as_deref())?;
            let options = bargain_server::ServeOptions {
                addr: SocketAddr::new(host, port),
                data_dir: Some(data_dir),
                static_dir: Some(static_dir),
                token,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(bargain_server::serve(engine, options))?;
        }
    }
    Ok(())
}

fn play(engine: Engine, product: Option<&Path>, seed: u64) -> Result<()> {
    let product: Product = match product {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_value(with_product_defaults(serde_json::from_str(&text)?, "play"))?
        }
        None => Product {
            id: "demo".into(),
            title: "Film camera".into(),
            description: "Fully working, light wear on the body.".into(),
            category: "cameras".into(),
            list_price: Money::from_major(250),
            bottom_price: Money::from_major(200),
        },
    };
    let mut session: Session = engine.new_session("play", product, seed)?;
    let currency = session.currency.clone();
    println!(
        "{} listed at {} (bottom {}). Type as the buyer; /quit to stop.",
        session.product.title,
        session.product.list_price.render(&currency),
        session.product.bottom_price.render(&currency)
    );
    let stdin = std::io::stdin();
    let mut clock = 0;
    loop {
        print!("buyer> ");
        std::io::stdout().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        let outcome = engine.respond(&session, line, clock)?;
        clock += 2;
        session = outcome.session;
        if let (Some(reply), Some(d)) = (&outcome.reply, &outcome.decision) {
            println!("seller> {reply}");
            let price = d.seller_price.map(|p| p.render(&currency)).unwrap_or_else(|| "-".into());
            let seen = d.buyer_price_seen.map(|p| p.render(&currency)).unwrap_or_else(|| "-".into());
            let skill = d.skill.map(|s| s.display_name()).unwrap_or("-");
            println!("  [{} / {skill} / price {price} / buyer {seen}]", d.action.label());
            for m in &d.anticipated_buyer_moves {
                println!("  anticipates: {m}");
            }
        }
        if !session.is_open() {
            match session.deal_price {
                Some(p) => println!("deal at {}", p.render(&currency)),
                None => println!("session ended: {:?}", session.status),
            }
            break;
        }
    }
    if session.utterances.is_empty() {
        bail!("no messages exchanged");
    }
    Ok(())
}
