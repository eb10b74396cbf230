use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{validate_spec, InterarrivalLaw, NetworkSpec};
use crate::num::{parse_decimal, Matrix, Q};
use crate::policies::{ConstantOverrides, PreemptiveOptions};

use super::{HarnessError, PolicyChoice, Scenario};

/// A rate written either as a TOML number or as a string such as `"15/2"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Rate {
    fn exact(&self) -> Result<Q, HarnessError> {
        let text = match self {
            Rate::Int(v) => v.to_string(),
            // The shortest round-trip form is what the user typed.
            Rate::Float(v) => format!("{v:?}"),
            Rate::Text(s) => s.clone(),
        };
        parse_decimal(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub lambda: Vec<Rate>,
    pub mu: Vec<Vec<Rate>>,
    pub nu: Vec<Rate>,
    #[serde(default)]
    pub lambda_hat: Option<Vec<Rate>>,
    #[serde(default)]
    pub mu_hat: Option<Vec<Vec<Rate>>>,
    #[serde(default)]
    pub x0_hat: Option<Vec<Rate>>,
    /// Law names such as `exponential` or `erlang(4)`.
    #[serde(default)]
    pub interarrival: Option<Vec<String>>,
    #[serde(default)]
    pub scv: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub policy: Option<String>,
    pub n: Option<Vec<u64>>,
    pub epsilon: Option<f64>,
    pub horizon: Option<f64>,
    pub replications: Option<u64>,
    pub seed: Option<u64>,
    /// 1-based, like every index a user sees.
    pub cycle: Option<usize>,
    pub i0: Option<usize>,
    pub j0: Option<usize>,
    pub kn_exponent: Option<f64>,
    pub a0: Option<f64>,
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub threads: Option<usize>,
    pub representation_checks: Option<u64>,
    pub output: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
}

fn exact_vec(v: &[Rate]) -> Result<Vec<Q>, HarnessError> {
    v.iter().map(Rate::exact).collect()
}

fn exact_matrix(rows: &[Vec<Rate>]) -> Result<Matrix<Q>, HarnessError> {
    let rows = rows.iter().map(|r| exact_vec(r)).collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(HarnessError::Config("matrix rows must be nonempty and of equal length".into()));
    }
    Ok(Matrix::from_rows(rows))
}

impl ConfigFile {
    /// The network, checked against every spec invariant.
    pub fn spec(&self) -> Result<NetworkSpec, HarnessError> {
        let net = &self.network;
        let mu = exact_matrix(&net.mu)?;
        let mut spec = NetworkSpec::first_order(exact_vec(&net.lambda)?, mu, exact_vec(&net.nu)?);
        if let Some(v) = &net.lambda_hat {
            spec.lambda_hat = exact_vec(v)?;
        }
        if let Some(m) = &net.mu_hat {
            spec.mu_hat = exact_matrix(m)?;
        }
        if let Some(v) = &net.x0_hat {
            spec.x0_hat = exact_vec(v)?;
        }
        if let Some(laws) = &net.interarrival {
            let laws = laws
                .iter()
                .map(|s| s.parse::<InterarrivalLaw>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(HarnessError::Config)?;
            spec = spec.with_interarrival(laws);
        }
        if let Some(scv) = &net.scv {
            spec.scv = scv.clone();
        }
        let problems = validate_spec(&spec);
        if !problems.is_empty() {
            let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
            return Err(HarnessError::Config(list.join("; ")));
        }
        Ok(spec)
    }
}

impl ScenarioSection {
    pub fn policy_choice(&self) -> Result<PolicyChoice, HarnessError> {
        let zero_based = |v: Option<usize>, what: &str| -> Result<Option<usize>, HarnessError> {
            match v {
                Some(0) => Err(HarnessError::Config(format!("{what} is 1-based"))),
                other => Ok(other.map(|k| k - 1)),
            }
        };
        match self.policy.as_deref().unwrap_or("preemptive") {
            "preemptive" | "p-scp" => {
                let mut options = PreemptiveOptions {
                    cycle: zero_based(self.cycle, "cycle")?,
                    i0: zero_based(self.i0, "i0")?.unwrap_or(0),
                    j0: zero_based(self.j0, "j0")?.unwrap_or(0),
                    ..Default::default()
                };
                if let Some(p) = self.kn_exponent {
                    options.kn_exponent = p;
                }
                options.a0 = self.a0;
                Ok(PolicyChoice::Preemptive(options))
            }
            "nonpreemptive" | "n-scp" => Ok(PolicyChoice::Nonpreemptive(ConstantOverrides {
                kappa: self.kappa,
                delta: self.delta,
                gamma: self.gamma,
            })),
            "greedy" => Ok(PolicyChoice::Greedy),
            other => Err(HarnessError::Config(format!("unknown policy {other:?}"))),
        }
    }

    /// Fills unset fields with the defaults of the standard sweep.
    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        let scenario = Scenario {
            policy: self.policy_choice()?,
            n_values: self.n.clone().unwrap_or_else(|| vec![50, 200, 800]),
            epsilon: self.epsilon.unwrap_or(0.5),
            horizon: self.horizon.unwrap_or(5.0),
            replications: self.replications.unwrap_or(200),
            seed: self.seed.unwrap_or(1),
            threads: self.threads,
            representation_checks: self.representation_checks.unwrap_or(0),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ConfigFile, HarnessError> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::num::q;

    const EXAMPLE: &str = r#"
[network]
lambda = ["15/2", 2]
mu = [[4, 7], [2, 4]]
nu = [1, 1]
x0_hat = [-1, -1.0]

[scenario]
policy = "preemptive"
n = [50, 200]
cycle = 1
"#;

    #[test]
    fn parses_exact_rates() {
        let cfg = parse_config(EXAMPLE).unwrap();
        let spec = cfg.spec().unwrap();
        assert_eq!(spec, examples::inward_cycle().with_x0_hat(vec![q(-1), q(-1)]));
        let s = cfg.scenario.scenario().unwrap();
        assert_eq!(s.n_values, vec![50, 200]);
        match s.policy {
            PolicyChoice::Preemptive(o) => assert_eq!(o.cycle, Some(0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn float_rates_are_read_as_written() {
        assert_eq!(Rate::Float(0.1).exact().unwrap(), parse_decimal("1/10").unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_config("[network]\nlambda = [1]\n").is_err());
        let bad_shape = EXAMPLE.replace("mu = [[4, 7], [2, 4]]", "mu = [[4, 7], [2]]");
        assert!(parse_config(&bad_shape).unwrap().spec().is_err());
        let zero_cycle = EXAMPLE.replace("cycle = 1", "cycle = 0");
        assert!(parse_config(&zero_cycle).unwrap().scenario.policy_choice().is_err());
        let unknown = EXAMPLE.replace("cycle = 1", "colour = 1");
        assert!(parse_config(&unknown).is_err());
    }
}
