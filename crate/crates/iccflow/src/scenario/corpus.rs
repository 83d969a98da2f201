//! The builtin scenario corpus.
//!
//! Scenarios are shipped as data files under `corpus/` and embedded into
//! the binary, so the corpus works without any filesystem layout. The CLI
//! can point at a different directory through the environment variable
//! named by [`CORPUS_DIR_ENV`].
//!
//! Coverage: nine single-pair leak paths in the style of the DroidBench
//! inter-app benchmarks (including service-typed receivers), three
//! complementary-permission collusion pairs, ten paths of the
//! sender0/sender1 development suite (including the shared-preference and
//! application-object split-leak receivers), a four-component relay chain,
//! a chooser-mediated interception, three real-world-styled threat
//! analogs, and four benign or coincidental-match cases.

use std::fs;
use std::path::Path;

use super::{parse_scenario, Scenario, ScenarioError};
use crate::catalog::Catalogs;

/// Environment variable that overrides the corpus directory in the CLI.
pub const CORPUS_DIR_ENV: &str = "ICCFLOW_CORPUS_DIR";

macro_rules! corpus_file {
    ($name:literal) => {
        ($name, include_str!(concat!("../../corpus/", $name, ".scn")))
    };
}

const CORPUS: &[(&str, &str)] = &[
    corpus_file!("droidbench_sendsms"),
    corpus_file!("droidbench_startactivityforresult"),
    corpus_file!("droidbench_deviceid_broadcast"),
    corpus_file!("droidbench_deviceid_contentprovider"),
    corpus_file!("droidbench_deviceid_ordered"),
    corpus_file!("droidbench_deviceid_service"),
    corpus_file!("droidbench_location1"),
    corpus_file!("droidbench_location_broadcast"),
    corpus_file!("droidbench_location_service"),
    corpus_file!("iccta_startactivity"),
    corpus_file!("iccta_startservice"),
    corpus_file!("iccta_startbroadcast"),
    corpus_file!("ourdev_sender0_receiver0"),
    corpus_file!("ourdev_sender0_receiver1"),
    corpus_file!("ourdev_sender0_receiver2"),
    corpus_file!("ourdev_sender0_shareference"),
    corpus_file!("ourdev_sender0_application"),
    corpus_file!("ourdev_sender1_receiver0"),
    corpus_file!("ourdev_sender1_receiver1"),
    corpus_file!("ourdev_sender1_receiver2"),
    corpus_file!("ourdev_sender1_shareference"),
    corpus_file!("ourdev_sender1_application"),
    corpus_file!("chain_four_components"),
    corpus_file!("resolver_chooser"),
    corpus_file!("hijack_location"),
    corpus_file!("hijack_chooser_log"),
    corpus_file!("spoof_write"),
    corpus_file!("collusion_deviceid_file"),
    corpus_file!("coincidental_format"),
    corpus_file!("benign_url_check"),
    corpus_file!("benign_location_unused"),
    corpus_file!("benign_url_internet"),
];

/// Names of all builtin scenarios, in corpus order.
pub fn corpus_names() -> Vec<&'static str> {
    CORPUS.iter().map(|(name, _)| *name).collect()
}

/// The raw document of one builtin scenario.
pub fn corpus_source(name: &str) -> Option<&'static str> {
    CORPUS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Parse one builtin scenario.
pub fn corpus_scenario(name: &str, catalogs: &Catalogs) -> Option<Scenario> {
    corpus_source(name).map(|text| {
        parse_scenario(text, catalogs).expect("builtin corpus scenarios are valid")
    })
}

/// Parse the whole builtin corpus, in corpus order.
pub fn builtin_corpus(catalogs: &Catalogs) -> Vec<Scenario> {
    CORPUS
        .iter()
        .map(|(name, text)| {
            parse_scenario(text, catalogs)
                .unwrap_or_else(|e| panic!("builtin scenario '{name}' is invalid: {e}"))
        })
        .collect()
}

/// Load `.scn` files from a directory, sorted by file name. Used when the
/// corpus directory is overridden.
pub fn corpus_from_dir(
    dir: &Path,
    catalogs: &Catalogs,
) -> Result<Vec<(String, Scenario)>, ScenarioError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| ScenarioError::Invalid(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "scn"))
        .collect();
    paths.sort();
    let mut scenarios = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)
            .map_err(|e| ScenarioError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let scenario = parse_scenario(&text, catalogs)?;
        scenarios.push((scenario.name.clone(), scenario));
    }
    Ok(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThreatType;
    use crate::scenario::serialize_scenario;

    #[test]
    fn corpus_has_the_documented_coverage() {
        let names = corpus_names();
        assert!(names.len() >= 20, "corpus too small: {}", names.len());
        assert_eq!(names.iter().filter(|n| n.starts_with("droidbench_")).count(), 9);
        assert_eq!(names.iter().filter(|n| n.starts_with("iccta_")).count(), 3);
        assert_eq!(names.iter().filter(|n| n.starts_with("ourdev_")).count(), 10);
        assert!(names.iter().filter(|n| n.starts_with("benign_") || n.starts_with("coincidental_")).count() >= 3);
        for required in [
            "hijack_location",
            "spoof_write",
            "collusion_deviceid_file",
            "coincidental_format",
            "chain_four_components",
            "resolver_chooser",
            "ourdev_sender0_shareference",
            "ourdev_sender0_application",
        ] {
            assert!(names.contains(&required), "missing scenario '{required}'");
        }
    }

    #[test]
    fn every_corpus_scenario_parses_and_round_trips() {
        let catalogs = Catalogs::default();
        for (name, text) in CORPUS {
            let scenario = parse_scenario(text, &catalogs)
                .unwrap_or_else(|e| panic!("scenario '{name}' failed to parse: {e}"));
            assert_eq!(&scenario.name, name, "file name and scenario name differ");
            let reparsed = parse_scenario(&serialize_scenario(&scenario), &catalogs)
                .unwrap_or_else(|e| panic!("serialized '{name}' failed to re-parse: {e}"));
            assert_eq!(reparsed, scenario, "round trip changed scenario '{name}'");
        }
    }

    #[test]
    fn hijack_location_matches_the_documented_shape() {
        let catalogs = Catalogs::default();
        let scenario = corpus_scenario("hijack_location", &catalogs).unwrap();
        assert_eq!(scenario.apps.len(), 2);
        let victim = scenario.app("com.victim").unwrap();
        assert!(victim.permissions.contains("ACCESS_FINE_LOCATION"));
        let malware = scenario.app("com.malware1").unwrap();
        let sniffer = malware.component("Sniffer").unwrap();
        assert!(sniffer
            .filters
            .iter()
            .any(|f| f.actions.contains("com.victim.SHOW")));
        assert_eq!(scenario.expected_verdicts.len(), 1);
        assert_eq!(scenario.expected_verdicts[0].threat, ThreatType::Hijacking);
    }

    #[test]
    fn expected_threat_mix_is_represented() {
        let catalogs = Catalogs::default();
        let corpus = builtin_corpus(&catalogs);
        let mut hijack = 0;
        let mut spoof = 0;
        let mut collusion = 0;
        let mut benign = 0;
        for scenario in &corpus {
            if scenario.expected_verdicts.is_empty() {
                benign += 1;
            }
            for verdict in &scenario.expected_verdicts {
                match verdict.threat {
                    ThreatType::Hijacking => hijack += 1,
                    ThreatType::Spoofing => spoof += 1,
                    ThreatType::Collusion => collusion += 1,
                    ThreatType::None => unreachable!("parser rejects planted none"),
                }
            }
        }
        assert!(hijack >= 9, "hijacking paths: {hijack}");
        assert!(spoof >= 3, "spoofing paths: {spoof}");
        assert!(collusion >= 6, "collusion paths: {collusion}");
        assert!(benign >= 4, "benign scenarios: {benign}");
    }
}
