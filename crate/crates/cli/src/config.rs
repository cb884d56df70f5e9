//! Command-line and config-file settings.
//!
//! Every setting can come from a flag (`--dsnr-db 15`) or from a flat
//! `key = value` file passed with `--config` (`dsnr_db = 15`). Flags win.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;
use tgi_core::experiments::{BarParams, SweepSpec, SweepVariable};
use tgi_core::formats::decode_key_values;
use tgi_core::scene::{
    make_bar_scene_1d, make_phantom_scene_with, DsnrConvention, PhantomParams, Scene,
    DEFAULT_T_MIN, PHANTOM_HEIGHTS,
};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "TGI_OUTPUT_DIR";
pub const FALLBACK_OUTPUT_DIR: &str = "tgi-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Phantom,
    Bar,
}

impl FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "phantom" => Ok(SceneKind::Phantom),
            "bar" => Ok(SceneKind::Bar),
            _ => Err(format!("`{s}` is not one of: phantom, bar")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Threshold the single-shot image at `mask_fraction · max`.
    SingleShot,
    /// The scene's true support.
    Truth,
}

impl FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single-shot" | "single_shot" => Ok(MaskMode::SingleShot),
            "truth" => Ok(MaskMode::Truth),
            _ => Err(format!("`{s}` is not one of: single-shot, truth")),
        }
    }
}

/// DSNR in dB, or `none` for a noise-free capture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dsnr(pub Option<f64>);

impl FromStr for Dsnr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(Dsnr(None));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("`{s}` is not a number or `none`"))?;
        if !v.is_finite() {
            return Err(format!("`{s}` is not finite"));
        }
        Ok(Dsnr(Some(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convention(pub DsnrConvention);

impl FromStr for Convention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variance" => Ok(Convention(DsnrConvention::Variance)),
            "std" => Ok(Convention(DsnrConvention::Std)),
            _ => Err(format!("`{s}` is not one of: variance, std")),
        }
    }
}

/// Comma-separated values.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse()
                    .map_err(|_| format!("`{item}` is not a valid list element"))
            })
            .collect::<Result<_, _>>()
            .map(List)
    }
}

macro_rules! settings {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty),* $(,)?) => {
        /// Optional settings shared by all subcommands.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Settings {
            /// Flat `key = value` file; flags override its values.
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                $(#[doc = $doc])*
                #[arg(long)]
                pub $field: Option<$ty>,
            )*
        }

        impl Settings {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one field from a config-file entry. Dashes and
            /// underscores in `key` are interchangeable.
            fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
                match key.replace('-', "_").as_str() {
                    $(stringify!($field) => {
                        self.$field = Some(value.parse().map_err(|e| {
                            CliError::Usage(format!("invalid value for `{key}`: {e}"))
                        })?);
                    })*
                    _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// Fields of `self` take precedence over `base`.
            fn or(self, base: Settings) -> Settings {
                Settings {
                    config: self.config.or(base.config),
                    $($field: self.$field.or(base.$field),)*
                }
            }
        }
    };
}

settings! {
    /// `phantom` or `bar`
    scene: SceneKind,
    /// Scene width in pixels
    width: usize,
    /// Scene height in pixels (1 for the bar)
    height: usize,
    /// Largest relative height in ticks
    max_height: u32,
    /// Number of pulses K
    k: usize,
    /// Samples per pulse P
    p: usize,
    /// Integration time of the nearest possible point, ticks
    t_min: u32,
    /// Shutter window in ticks
    shutter_len: u32,
    /// DSNR in dB, or `none` for noise-free
    dsnr_db: Dsnr,
    /// `variance` or `std`
    convention: Convention,
    /// Seed for the reference pulses and noise
    seed: u64,
    /// Comma-separated seeds for sweeps
    seeds: List<u64>,
    /// Comma-separated sweep grid
    grid: List<f64>,
    /// Seconds per tick
    tick_seconds: f64,
    /// Single-shot mask threshold as a fraction of the image maximum
    mask_fraction: f64,
    /// `single-shot` or `truth`
    mask: MaskMode,
    /// Directory holding `simulate` output, for `reconstruct`
    input: PathBuf,
    /// Output directory
    out: PathBuf,
    /// Worker threads
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Scene,
    Simulate,
    Reconstruct,
    Run,
    SweepDsnr,
    SweepK,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Scene => "scene",
            CommandKind::Simulate => "simulate",
            CommandKind::Reconstruct => "reconstruct",
            CommandKind::Run => "run",
            CommandKind::SweepDsnr => "sweep-dsnr",
            CommandKind::SweepK => "sweep-k",
        }
    }

    fn is_sweep(self) -> bool {
        matches!(self, CommandKind::SweepDsnr | CommandKind::SweepK)
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tgi",
    version,
    about = "Temporal ghost imaging depth simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene
    Scene(Settings),
    /// Write a scene, reference pulses and a measurement cube
    Simulate(Settings),
    /// Reconstruct depth from the output of `simulate`
    Reconstruct(Settings),
    /// Simulate and reconstruct end to end
    Run(Settings),
    /// RMSE against DSNR on the bar scene
    SweepDsnr(Settings),
    /// RMSE against the number of pulses on the bar scene
    SweepK(Settings),
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub scene: SceneKind,
    pub width: usize,
    pub height: usize,
    pub max_height: u32,
    pub k: usize,
    pub p: usize,
    pub t_min: u32,
    pub shutter_len: u32,
    /// `None` is noise-free.
    pub dsnr_db: Option<f64>,
    pub convention: DsnrConvention,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub grid: Vec<f64>,
    pub tick_seconds: f64,
    pub mask_fraction: f64,
    pub mask: MaskMode,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

/// Parses `argv` (program name first) and any `--config` file. The default
/// output directory comes from [`OUTPUT_DIR_ENV`].
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_out = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    parse_config_with(argv, env_out)
}

/// [`parse_config`] with the environment's output directory passed in.
pub fn parse_config_with<I, T>(argv: I, env_out: Option<PathBuf>) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (command, flags) = match cli.command {
        Command::Scene(s) => (CommandKind::Scene, s),
        Command::Simulate(s) => (CommandKind::Simulate, s),
        Command::Reconstruct(s) => (CommandKind::Reconstruct, s),
        Command::Run(s) => (CommandKind::Run, s),
        Command::SweepDsnr(s) => (CommandKind::SweepDsnr, s),
        Command::SweepK(s) => (CommandKind::SweepK, s),
    };
    let settings = match &flags.config {
        Some(path) => flags.clone().or(read_config_file(path)?),
        None => flags,
    };
    let config = resolve(command, settings, env_out)?;
    config.validate()?;
    Ok(config)
}

fn read_config_file(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let pairs = decode_key_values(&text, &path.display().to_string())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut settings = Settings::default();
    for (key, value) in pairs {
        settings.set(&key, &value)?;
    }
    Ok(settings)
}

fn resolve(
    command: CommandKind,
    s: Settings,
    env_out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let scene = match (command.is_sweep(), s.scene) {
        (true, Some(SceneKind::Phantom)) => {
            return Err(CliError::Usage(format!(
                "{command} runs on the bar scene only"
            )))
        }
        (true, _) => SceneKind::Bar,
        (false, kind) => kind.unwrap_or(SceneKind::Phantom),
    };
    let bar = BarParams::default();
    let (default_w, default_h) = match scene {
        SceneKind::Phantom => (120, 120),
        SceneKind::Bar => (bar.pixels, 1),
    };
    let default_sweep = match command {
        CommandKind::SweepK => SweepSpec::measurements_default(),
        _ => SweepSpec::dsnr_default(),
    };
    let default_dsnr = match command {
        CommandKind::SweepK => default_sweep.dsnr_db,
        _ => 15.0,
    };
    let default_mask = match scene {
        SceneKind::Phantom => MaskMode::SingleShot,
        SceneKind::Bar => MaskMode::Truth,
    };
    Ok(RunConfig {
        command,
        scene,
        width: s.width.unwrap_or(default_w),
        height: s.height.unwrap_or(default_h),
        max_height: s.max_height.unwrap_or(PHANTOM_HEIGHTS[3]),
        k: s.k.unwrap_or(default_sweep.num_pulses),
        p: s.p.unwrap_or(default_sweep.pulse_len),
        t_min: s.t_min.unwrap_or(DEFAULT_T_MIN),
        shutter_len: s.shutter_len.unwrap_or(bar.shutter_len),
        dsnr_db: s.dsnr_db.map_or(Some(default_dsnr), |d| d.0),
        convention: s.convention.map_or(DsnrConvention::default(), |c| c.0),
        seed: s.seed.unwrap_or(1),
        seeds: s.seeds.map_or(default_sweep.seeds, |l| l.0),
        grid: s.grid.map_or(default_sweep.grid, |l| l.0),
        tick_seconds: s.tick_seconds.unwrap_or(1.0),
        mask_fraction: s.mask_fraction.unwrap_or(0.3),
        mask: s.mask.unwrap_or(default_mask),
        input: s.input,
        out_dir: s
            .out
            .or(env_out)
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR)),
        workers: s
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    })
}

impl RunConfig {
    /// Checks every precondition the compute stages would reject, so that
    /// bad settings fail as usage errors before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.workers == 0 {
            return usage("workers must be at least 1".into());
        }
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return usage(format!(
                "tick_seconds must be positive, got {}",
                self.tick_seconds
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return usage(format!(
                "mask_fraction {} outside [0, 1]",
                self.mask_fraction
            ));
        }
        if self.command == CommandKind::Reconstruct {
            if self.input.is_none() {
                return usage("reconstruct needs --input DIR".into());
            }
            return Ok(());
        }
        let scene = self
            .build_scene()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.command == CommandKind::Scene {
            return Ok(());
        }
        scene
            .check_pulse_len(self.p)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.command == CommandKind::SweepK && self.dsnr_db.is_none() {
            return usage("sweep-k needs a finite dsnr_db".into());
        }
        if self.command.is_sweep() {
            self.sweep_spec()
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        } else if self.k < 2 {
            return usage(format!("k must be at least 2, got {}", self.k));
        }
        Ok(())
    }

    pub fn phantom_params(&self) -> PhantomParams {
        PhantomParams {
            height_scale: self.max_height as f64 / PHANTOM_HEIGHTS[3] as f64,
            ..PhantomParams::new(self.width, self.height, self.t_min, self.shutter_len)
        }
    }

    pub fn bar_params(&self) -> BarParams {
        BarParams {
            pixels: self.width,
            max_height: self.max_height,
            t_min: self.t_min,
            shutter_len: self.shutter_len,
        }
    }

    pub fn build_scene(&self) -> tgi_core::Result<Scene> {
        let scene = match self.scene {
            SceneKind::Phantom => make_phantom_scene_with(&self.phantom_params())?.scene,
            SceneKind::Bar => {
                if self.height != 1 {
                    return Err(tgi_core::Error::InvalidDimension(format!(
                        "the bar scene is one pixel high, got height {}",
                        self.height
                    )));
                }
                make_bar_scene_1d(self.width, self.max_height, self.t_min, self.shutter_len)?
            }
        };
        scene.with_tick_seconds(self.tick_seconds)
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let variable = match self.command {
            CommandKind::SweepK => SweepVariable::NumMeasurements,
            _ => SweepVariable::DsnrDb,
        };
        SweepSpec {
            variable,
            grid: self.grid.clone(),
            num_pulses: self.k,
            dsnr_db: self.dsnr_db.unwrap_or(f64::INFINITY),
            convention: self.convention,
            seeds: self.seeds.clone(),
            bar: self.bar_params(),
            pulse_len: self.p,
            tick_seconds: self.tick_seconds,
        }
    }
}
