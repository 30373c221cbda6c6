//! Description generation through a chat-completion provider.
//!
//! Every request is keyed by a content hash of its template name and rendered
//! prompt and looked up in a [`ResponseCache`] before the provider is called.

mod cache;
mod description;
mod provider;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

pub use cache::{clear_dir, dir_stats, is_cache_key, CacheEntry, CacheStats, ResponseCache};
pub use description::{
    parse_bullets, parse_description_list, render_description_list, DescriptionSet,
};
pub use provider::{
    DescriptionProvider, HttpChatProvider, ProviderError, ProviderRequest, ProviderResponse,
    ReplayProvider, ScriptedProvider, API_KEY_ENV, API_URL_ENV,
};
pub use template::{
    render_class_list, PromptTemplate, Strategy, TemplateSet, Vars, FORMAT_REINFORCEMENT,
};

use crate::digest::framed_sha256_hex;

/// Node id attached to initial (per-class, non-comparative) descriptions.
pub const INITIAL_NODE_ID: &str = "init";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("class id must be non-empty")]
    InvalidClassId,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("template {name:?} is invalid: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no recorded response for prompt key {0}")]
    CacheMiss(String),
    #[error("could not parse provider response: {0}")]
    ParseFailure(String),
    #[error("response has no descriptions for class {0:?}")]
    MissingClassInResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySettings {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Attempts per request on transient transport errors.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GatewayStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

struct Permits {
    free: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.freed.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    provider: Arc<dyn DescriptionProvider>,
    cache: ResponseCache,
    templates: TemplateSet,
    settings: GatewaySettings,
    permits: Permits,
    stats: Mutex<GatewayStats>,
    used_keys: Mutex<BTreeSet<String>>,
}

impl Gateway {
    pub fn new(
        provider: Arc<dyn DescriptionProvider>,
        cache: ResponseCache,
        templates: TemplateSet,
        settings: GatewaySettings,
    ) -> Result<Self, GatewayError> {
        templates.validate()?;
        if !(settings.temperature >= 0.0 && settings.temperature.is_finite()) {
            return Err(GatewayError::InvalidInput(format!(
                "temperature must be >= 0, got {}",
                settings.temperature
            )));
        }
        Ok(Self {
            provider,
            cache,
            templates,
            permits: Permits::new(settings.max_in_flight),
            settings,
            stats: Mutex::new(GatewayStats::default()),
            used_keys: Mutex::new(BTreeSet::new()),
        })
    }

    /// In-memory cache, default templates and settings.
    pub fn with_provider(provider: Arc<dyn DescriptionProvider>) -> Self {
        Self::new(
            provider,
            ResponseCache::in_memory(),
            TemplateSet::default(),
            GatewaySettings::default(),
        )
        .expect("default templates are valid")
    }

    pub fn provider_id(&self) -> &str {
        self.provider.provider_id()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn stats(&self) -> GatewayStats {
        *self.stats.lock().expect("stats lock")
    }

    /// Digest over every prompt key this gateway has served, in key order.
    /// Trees record it as provenance.
    pub fn cache_digest(&self) -> String {
        let keys = self.used_keys.lock().expect("keys lock");
        framed_sha256_hex(keys.iter())
    }

    /// Forgets previously served keys so the next digest covers only new work.
    pub fn reset_digest(&self) {
        self.used_keys.lock().expect("keys lock").clear();
    }

    fn request_for(&self, template: &PromptTemplate, prompt: String) -> ProviderRequest {
        ProviderRequest {
            template: template.name.clone(),
            system: template.role_preamble.clone(),
            prompt,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        }
    }

    fn call(&self, request: ProviderRequest) -> Result<String, GatewayError> {
        let key = request.cache_key();
        self.used_keys
            .lock()
            .expect("keys lock")
            .insert(key.clone());
        if let Some(hit) = self
            .cache
            .get(&key)
            .map_err(|e| GatewayError::Cache(e.to_string()))?
        {
            self.stats.lock().expect("stats lock").cache_hits += 1;
            return Ok(hit.response);
        }

        let response = {
            let _permit = self.permits.acquire();
            let mut attempt = 0;
            loop {
                attempt += 1;
                self.stats.lock().expect("stats lock").provider_calls += 1;
                match self.provider.complete(&request) {
                    Ok(r) => break r,
                    Err(ProviderError::CacheMiss(k)) => return Err(GatewayError::CacheMiss(k)),
                    Err(e) if e.is_transient() && attempt < self.settings.max_attempts => {
                        let delay = self.settings.backoff_base * 2u32.pow(attempt - 1);
                        log::warn!(
                            "provider attempt {attempt} failed ({e}); retrying in {delay:?}"
                        );
                        std::thread::sleep(delay);
                    }
                    Err(e) => return Err(GatewayError::ProviderUnavailable(e.to_string())),
                }
            }
        };

        // fixture-backed caches are read-only
        if !self.cache.is_read_only() {
            self.cache
                .put(
                    &key,
                    CacheEntry::now(request.prompt, response.text.clone(), response.provider_id),
                )
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(response.text)
    }

    /// Per-class descriptions in the style of a plain "describe this object" prompt.
    pub fn initial_descriptions(&self, class_id: &str) -> Result<DescriptionSet, GatewayError> {
        if class_id.trim().is_empty() {
            return Err(GatewayError::InvalidClassId);
        }
        let template = &self.templates.initial;
        let prompt = template.render(&Vars {
            class: Some(class_id),
            ..Vars::default()
        });
        let text = self.call(self.request_for(template, prompt))?;
        let lines = parse_bullets(&text);
        if lines.is_empty() {
            return Err(GatewayError::ParseFailure(format!(
                "no list items in initial descriptions for {class_id:?}"
            )));
        }
        DescriptionSet::new(class_id, INITIAL_NODE_ID, lines)
    }

    /// One-sentence summary of what a group of classes has in common.
    pub fn summarize_group(&self, class_ids: &[String]) -> Result<String, GatewayError> {
        check_class_ids(class_ids, 1)?;
        let template = &self.templates.summary;
        let prompt = template.render(&Vars {
            class_list: Some(class_ids),
            ..Vars::default()
        });
        let text = self.call(self.request_for(template, prompt))?;
        let summary = text.trim();
        if summary.is_empty() {
            return Err(GatewayError::ParseFailure("empty group summary".into()));
        }
        Ok(summary.to_string())
    }

    /// Comparative descriptions for every member, from a single prompt naming
    /// the whole group. With a summary, the summary-conditioned template is used.
    pub fn compare_group(
        &self,
        class_ids: &[String],
        summary: Option<&str>,
        node_id: &str,
    ) -> Result<BTreeMap<String, DescriptionSet>, GatewayError> {
        check_class_ids(class_ids, 2)?;
        let template = match summary {
            Some(_) => &self.templates.compare_with_summary,
            None => &self.templates.compare,
        };
        let prompt = template.render(&Vars {
            class_list: Some(class_ids),
            summary,
            ..Vars::default()
        });
        let text = self.call(self.request_for(template, prompt.clone()))?;
        match parse_description_list(&text, class_ids, node_id) {
            Ok(sets) => Ok(sets),
            Err(
                first @ (GatewayError::ParseFailure(_) | GatewayError::MissingClassInResponse(_)),
            ) => {
                log::warn!("node {node_id}: {first}; retrying once with a format reminder");
                let retry = self.request_for(template, format!("{prompt}{FORMAT_REINFORCEMENT}"));
                let text = self.call(retry)?;
                parse_description_list(&text, class_ids, node_id)
            }
            Err(e) => Err(e),
        }
    }
}

fn check_class_ids(class_ids: &[String], min: usize) -> Result<(), GatewayError> {
    if class_ids.len() < min {
        return Err(GatewayError::InvalidInput(format!(
            "need at least {min} class ids, got {}",
            class_ids.len()
        )));
    }
    if class_ids.iter().any(|c| c.trim().is_empty()) {
        return Err(GatewayError::InvalidClassId);
    }
    let unique: BTreeSet<&String> = class_ids.iter().collect();
    if unique.len() != class_ids.len() {
        return Err(GatewayError::InvalidInput("duplicate class ids".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn gateway(provider: Arc<ScriptedProvider>) -> Gateway {
        Gateway::with_provider(provider)
    }

    #[test]
    fn initial_descriptions_from_scripted_list() {
        let p = Arc::new(ScriptedProvider::constant(
            "s",
            "- striped fur\n- orange coat",
        ));
        let set = gateway(p).initial_descriptions("tiger").unwrap();
        assert_eq!(set.lines(), ["striped fur", "orange coat"]);
        assert_eq!(set.class_id, "tiger");
    }

    #[test]
    fn initial_descriptions_reject_empty_class() {
        let p = Arc::new(ScriptedProvider::constant("s", "- x"));
        assert_eq!(
            gateway(p.clone()).initial_descriptions(""),
            Err(GatewayError::InvalidClassId)
        );
        assert_eq!(p.call_count(), 0);
    }

    #[test]
    fn initial_descriptions_without_list_fail() {
        let p = Arc::new(ScriptedProvider::constant("s", "I cannot help with that."));
        assert!(matches!(
            gateway(p).initial_descriptions("tiger"),
            Err(GatewayError::ParseFailure(_))
        ));
    }

    #[test]
    fn summary_passthrough_and_cache() {
        let p = Arc::new(ScriptedProvider::constant(
            "s",
            "small songbirds of North America",
        ));
        let g = gateway(p.clone());
        let birds: Vec<String> = (0..12).map(|i| format!("bird {i}")).collect();
        assert_eq!(
            g.summarize_group(&birds).unwrap(),
            "small songbirds of North America"
        );
        assert_eq!(
            g.summarize_group(&birds).unwrap(),
            "small songbirds of North America"
        );
        assert_eq!(p.call_count(), 1);
        assert_eq!(g.stats().cache_hits, 1);
        assert!(matches!(
            g.summarize_group(&[]),
            Err(GatewayError::InvalidInput(_))
        ));
    }

    #[test]
    fn compare_names_whole_group_in_one_prompt() {
        let p = Arc::new(ScriptedProvider::constant(
            "s",
            "### house wren\n- reddish-brown coloration with fine streaking\n\
             ### winter wren\n- dark brown with a very short tail",
        ));
        let g = gateway(p.clone());
        let group = names(&["house wren", "winter wren"]);
        let out = g.compare_group(&group, None, "root/0").unwrap();
        assert_eq!(
            out["house wren"].lines(),
            ["reddish-brown coloration with fine streaking"]
        );
        assert_eq!(out.len(), 2);
        let calls = p.calls();
        assert_eq!(calls.len(), 1);
        assert!(calls[0].prompt.contains("house wren") && calls[0].prompt.contains("winter wren"));
        assert_eq!(calls[0].template, "compare");
    }

    #[test]
    fn compare_with_summary_uses_summary_template() {
        let p = Arc::new(ScriptedProvider::constant("s", "### a\n- x\n### b\n- y"));
        let g = gateway(p.clone());
        g.compare_group(&names(&["a", "b"]), Some("letters"), "root")
            .unwrap();
        let call = &p.calls()[0];
        assert_eq!(call.template, "compare_with_summary");
        assert!(call.prompt.contains("letters"));
    }

    #[test]
    fn compare_missing_class_retries_once_then_fails() {
        let p = Arc::new(ScriptedProvider::constant("s", "### a\n- only a"));
        let g = gateway(p.clone());
        assert_eq!(
            g.compare_group(&names(&["a", "b"]), None, "root"),
            Err(GatewayError::MissingClassInResponse("b".into()))
        );
        let calls = p.calls();
        assert_eq!(calls.len(), 2);
        assert!(calls[1].prompt.ends_with(FORMAT_REINFORCEMENT));
    }

    #[test]
    fn compare_recovers_on_reinforced_prompt() {
        let p = Arc::new(ScriptedProvider::new("s", |req| {
            Ok(if req.prompt.contains("IMPORTANT") {
                "### a\n- x\n### b\n- y".to_string()
            } else {
                "a is like this, b is like that".to_string()
            })
        }));
        let out = gateway(p)
            .compare_group(&names(&["a", "b"]), None, "root")
            .unwrap();
        assert_eq!(out["b"].lines(), ["y"]);
    }

    #[test]
    fn compare_requires_two_classes() {
        let p = Arc::new(ScriptedProvider::constant("s", ""));
        assert!(matches!(
            gateway(p).compare_group(&names(&["a"]), None, "root"),
            Err(GatewayError::InvalidInput(_))
        ));
    }

    #[test]
    fn transient_errors_are_retried_up_to_limit() {
        let p = Arc::new(ScriptedProvider::new("s", |_| {
            Err(ProviderError::Transport("connection reset".into()))
        }));
        let settings = GatewaySettings {
            backoff_base: Duration::from_millis(1),
            ..GatewaySettings::default()
        };
        let g = Gateway::new(
            p.clone(),
            ResponseCache::in_memory(),
            TemplateSet::default(),
            settings,
        )
        .unwrap();
        assert!(matches!(
            g.summarize_group(&names(&["a"])),
            Err(GatewayError::ProviderUnavailable(_))
        ));
        assert_eq!(p.call_count(), 3);
    }

    #[test]
    fn non_transient_errors_are_not_retried() {
        let p = Arc::new(ScriptedProvider::new("s", |_| {
            Err(ProviderError::Status {
                status: 401,
                body: "unauthorized".into(),
            })
        }));
        let g = gateway(p.clone());
        assert!(g.summarize_group(&names(&["a"])).is_err());
        assert_eq!(p.call_count(), 1);
    }

    #[test]
    fn replay_serves_recorded_responses_offline() {
        let dir = tempfile::tempdir().unwrap();
        let live = Arc::new(ScriptedProvider::constant("live", "### a\n- x\n### b\n- y"));
        let recorder = Gateway::new(
            live,
            ResponseCache::open(dir.path()).unwrap(),
            TemplateSet::default(),
            GatewaySettings::default(),
        )
        .unwrap();
        let recorded = recorder
            .compare_group(&names(&["a", "b"]), None, "root")
            .unwrap();

        let replay = Arc::new(ReplayProvider::open(dir.path()).unwrap());
        let g = Gateway::with_provider(replay);
        assert_eq!(
            g.compare_group(&names(&["a", "b"]), None, "root").unwrap(),
            recorded
        );
        assert!(matches!(
            g.compare_group(&names(&["a", "c"]), None, "root"),
            Err(GatewayError::CacheMiss(_))
        ));
    }
}
