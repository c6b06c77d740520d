use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use knxsafe::fixtures::Stubs;
use knxsafe::library::{Library, LibraryError, HOME_ENV};
use knxsafe::runtime::{AppRuntimeRecord, Runtime, RuntimeError, RuntimeEvent, RUNTIME_SOURCE};
use knxsafe::simbus::UdpClient;

#[derive(Parser)]
#[command(
    name = "knxsafe",
    version,
    about = "Develop, verify and run KNX automation apps"
)]
struct Cli {
    /// Directory holding generated/, app_library/, assignments/ and logs/.
    #[arg(long, global = true, env = HOME_ENV, default_value = ".")]
    home: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new app project in generated/ from a prototype file.
    #[command(name = "generateApp")]
    GenerateApp {
        #[arg(short = 'd', long = "devices")]
        prototype: PathBuf,
        #[arg(short = 'n', long)]
        name: String,
    },
    /// Write the bindings skeleton for the apps in generated/.
    #[command(name = "generateBindings")]
    GenerateBindings {
        #[arg(short = 'f', long = "file")]
        physical: PathBuf,
    },
    /// Verify the apps in generated/ and install them.
    #[command(name = "compile")]
    Compile {
        #[arg(short = 'f', long = "file")]
        physical: PathBuf,
    },
    /// Run the installed apps against a bus endpoint.
    #[command(name = "run")]
    Run {
        /// Bus endpoint as address:port.
        #[arg(short = 'a', long = "address")]
        address: String,
    },
    /// List installed apps.
    #[command(name = "listApps")]
    ListApps,
    /// Uninstall an app after re-verifying the others.
    #[command(name = "removeApp")]
    RemoveApp { name: String },
}

/// Errors from `run` that happen after the library was read.
enum RunFailure {
    Library(LibraryError),
    Runtime(RuntimeError),
    Io(io::Error),
}

impl From<LibraryError> for RunFailure {
    fn from(e: LibraryError) -> Self {
        RunFailure::Library(e)
    }
}

impl From<RuntimeError> for RunFailure {
    fn from(e: RuntimeError) -> Self {
        RunFailure::Runtime(e)
    }
}

impl From<io::Error> for RunFailure {
    fn from(e: io::Error) -> Self {
        RunFailure::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let lib = Library::open(&cli.home);
    let result = match cli.command {
        Command::GenerateApp { prototype, name } => {
            lib.generate_app(&prototype, &name).map(|dir| {
                println!("generated {}", dir.display());
            })
        }
        Command::GenerateBindings { physical } => lib.generate_bindings(&physical).map(|_| {
            println!(
                "wrote {}",
                lib.generated_dir()
                    .join(knxsafe::compiler::BINDINGS_FILE)
                    .display()
            );
        }),
        Command::Compile { physical } => lib.compile(&physical).map(|out| {
            for w in &out.warnings {
                println!("warning: {w}");
            }
            print!("{}", out.report);
            println!("installed: {}", out.installed.join(", "));
        }),
        Command::ListApps => lib.list_apps().map(|apps| {
            for (name, perm) in apps {
                println!("{name} {perm}");
            }
        }),
        Command::RemoveApp { name } => lib.remove_app(&name).map(|report| {
            print!("{report}");
            println!("removed: {name}");
        }),
        Command::Run { address } => {
            return match run(&lib, &address) {
                Ok(()) => ExitCode::SUCCESS,
                Err(RunFailure::Library(e)) => fail(&e),
                Err(RunFailure::Runtime(e)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                Err(RunFailure::Io(e)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &LibraryError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(lib: &Library, address: &str) -> Result<(), RunFailure> {
    let installed = lib.installed_apps()?;
    if installed.is_empty() {
        return Err(LibraryError::NothingToRun.into());
    }
    let table = lib.table()?;
    let stubs = Stubs::new();
    let apps: Vec<AppRuntimeRecord> = installed
        .into_iter()
        .map(|a| {
            let impls = stubs.registry(&a.program);
            AppRuntimeRecord::new(
                a.prototype.name.clone(),
                a.prototype.is_privileged(),
                a.prototype.timer,
                a.program,
                a.channels,
                impls,
            )
        })
        .collect();

    let client = UdpClient::connect(address, RUNTIME_SOURCE, Duration::from_secs(2))
        .map_err(|e| RuntimeError::Startup(e.into()))?;
    std::fs::create_dir_all(lib.logs_dir())?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let log_path = lib.logs_dir().join(format!("run-{stamp}.jsonl"));
    let log = BufWriter::new(File::create(&log_path)?);

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .map_err(|e| io::Error::other(e.to_string()))?;
    }

    let mut rt = Runtime::initialize(&table, apps, client, Some(Box::new(log)))?;
    println!(
        "running {} app(s) against {address}; log: {}",
        rt.apps().len(),
        log_path.display()
    );
    let start = Instant::now();
    let mut out = io::stdout();
    while !stop.load(Ordering::SeqCst) {
        let now = start.elapsed().as_secs();
        rt.advance_to(now)?;
        for m in stubs.take_messages() {
            writeln!(out, "message: {m}")?;
        }
        if rt.all_stopped() {
            eprintln!("every app has been stopped");
            break;
        }
        let until_timer = rt
            .next_timer_due()
            .map_or(Duration::from_millis(200), |due| {
                (start + Duration::from_secs(due)).saturating_duration_since(Instant::now())
            });
        let wait = until_timer.min(Duration::from_millis(200));
        let Some(t) = rt.bus_mut().recv(wait).map_err(RuntimeError::Bus)? else {
            continue;
        };
        match rt.event_for(&t) {
            Ok(Some(ev)) => {
                rt.process_event(ev)?;
            }
            Ok(None) => {}
            Err(e) => eprintln!("ignored telegram: {e}"),
        }
        for m in stubs.take_messages() {
            writeln!(out, "message: {m}")?;
        }
    }
    rt.process_event(RuntimeEvent::ShutdownRequested)?;
    println!("stopped");
    Ok(())
}
