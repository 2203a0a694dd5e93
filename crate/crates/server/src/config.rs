use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use cocobo_core::llm::{ChainSettings, ProviderConfig};
use cocobo_core::session::{FileStore, ServiceConfig, SessionService};
use cocobo_core::sim::{DeployOptions, EventScript, WorldModel};
use serde::Deserialize;

/// `cocobo serve` configuration, read from TOML. Relative paths are taken
/// from the config file's directory. Credentials for a live provider come
/// from the environment variable named by `provider.apiKeyEnv`.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// dataDir = "sessions"
/// world = "worlds/office.json"
///
/// [provider]
/// kind = "liveChatCompletion"
/// baseUrl = "https://api.example.com/v1"
/// model = "some-model"
///
/// [bridge]
/// listen = "127.0.0.1:9090"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    /// World used by simulated deploys and as the chains' place list.
    #[serde(default)]
    pub world: Option<PathBuf>,
    /// Sensor script for simulated deploys.
    #[serde(default)]
    pub events: Option<PathBuf>,
    /// Real milliseconds per virtual millisecond for simulated deploys.
    #[serde(default)]
    pub time_scale: Option<f64>,
    #[serde(default)]
    pub max_words: Option<usize>,
    #[serde(default)]
    pub snapshot_every: Option<u64>,
    /// Also run a simulated robot behind a bridge endpoint.
    #[serde(default)]
    pub bridge: Option<BridgeConfig>,
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BridgeConfig {
    pub listen: String,
    #[serde(default)]
    pub time_scale: Option<f64>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    "sessions".into()
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Config> {
        let mut config: Config = toml::from_str(text)?;
        config.base = base.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn world(&self) -> anyhow::Result<Option<WorldModel>> {
        self.world
            .as_ref()
            .map(|p| WorldModel::load(&self.resolve(p)).with_context(|| format!("world {}", p.display())))
            .transpose()
    }

    pub fn events(&self) -> anyhow::Result<EventScript> {
        match &self.events {
            Some(p) => EventScript::load(&self.resolve(p)).with_context(|| format!("events {}", p.display())),
            None => Ok(EventScript::default()),
        }
    }

    pub fn service(&self) -> anyhow::Result<SessionService> {
        let provider = self.provider.build(&self.base)?;
        let mut settings = ChainSettings {
            max_repair_retries: self.provider.max_repair_retries,
            ..ChainSettings::default()
        };
        if let Some(w) = self.max_words {
            settings.max_words = w;
        }
        let mut config = ServiceConfig {
            settings,
            world: self.world()?,
            events: self.events()?,
            deploy: DeployOptions {
                time_scale: self.time_scale,
                ..DeployOptions::default()
            },
            ..ServiceConfig::default()
        };
        if let Some(n) = self.snapshot_every {
            config.snapshot_every = n;
        }
        let store = FileStore::open(self.resolve(&self.data_dir))?;
        Ok(SessionService::new(Arc::new(store), provider, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cocobo_core::llm::ProviderKind;

    #[test]
    fn minimal_and_full_configs_parse() {
        let c = Config::parse("[provider]\nkind = \"scripted\"\nscript = \"s.json\"\n", Path::new("/etc/x")).unwrap();
        assert_eq!(c.listen, "127.0.0.1:8080");
        assert_eq!(c.resolve(&c.data_dir), Path::new("/etc/x/sessions"));
        let c = Config::parse(
            r#"
            listen = "0.0.0.0:1"
            world = "w.json"
            timeScale = 1.0
            [provider]
            kind = "liveChatCompletion"
            baseUrl = "http://localhost:1"
            model = "m"
            maxRepairRetries = 4
            [bridge]
            listen = "127.0.0.1:0"
            "#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.provider.max_repair_retries, 4);
        assert!(matches!(c.provider.kind, ProviderKind::LiveChatCompletion { ref api_key_env, .. } if api_key_env == "COCOBO_API_KEY"));
        assert!(Config::parse("bogus = 1\n[provider]\nkind = \"scripted\"\nscript = \"s\"\n", Path::new(".")).is_err());
    }
}
