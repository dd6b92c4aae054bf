use std::path::Path;

use loctrack::io;
use loctrack::Error;
use loctrack_core::fim::{self};
use loctrack_core::recursive;
use loctrack_core::scenario::{self, PriorModel, Trajectory};
use loctrack_core::BlockMatrix;
use nalgebra::DMatrix;

fn baseline() -> scenario::ScenarioConfig {
    io::read_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/baseline.json")).unwrap()
}

fn toy_efim() -> BlockMatrix {
    let c = io::read_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/toy.json")).unwrap();
    let traj = Trajectory::stationary(&c);
    let meas = fim::measurement_fim(&c, &traj).unwrap();
    let prior = fim::prior_fim(&PriorModel::from_config(&c).unwrap(), &[traj]).unwrap();
    fim::assemble_efim(&meas, &prior).unwrap()
}

#[test]
fn scenario_file_round_trip() {
    let c = baseline();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    io::write_scenario(&p, &c).unwrap();
    assert_eq!(io::read_scenario(&p).unwrap(), c);
}

#[test]
fn missing_file_names_the_path() {
    let err = io::read_scenario(Path::new("/nonexistent/x.json")).unwrap_err();
    assert!(matches!(err, Error::File { .. }));
    assert!(err.to_string().contains("/nonexistent/x.json"));
}

#[test]
fn trajectory_csv_round_trip() {
    let c = baseline();
    let traj = scenario::sample_trajectory(&c, 3).unwrap();
    let mut buf = Vec::new();
    io::write_trajectory(&mut buf, &traj).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t,k,x,y\n1,1,"));
    let back = io::read_trajectory(buf.as_slice()).unwrap();
    assert_eq!(back.n_steps, traj.n_steps);
    assert_eq!(back.n_users, traj.n_users);
    assert_eq!(back.positions, traj.positions);
}

#[test]
fn trajectory_rows_may_be_shuffled() {
    let csv = "t,k,x,y\n2,1,5,6\n1,2,3,4\n1,1,1,2\n2,2,7,8\n";
    let traj = io::read_trajectory(csv.as_bytes()).unwrap();
    assert_eq!(traj.at(0, 0)[0], 1.0);
    assert_eq!(traj.at(1, 1)[1], 8.0);
}

#[test]
fn malformed_trajectories_are_rejected() {
    let zero = "t,k,x,y\n0,1,1,2\n";
    assert!(matches!(io::read_trajectory(zero.as_bytes()), Err(Error::Format(_))));
    let missing = "t,k,x,y\n1,1,1,2\n2,2,1,2\n";
    assert!(matches!(io::read_trajectory(missing.as_bytes()), Err(Error::Format(_))));
    let dup = "t,k,x,y\n1,1,1,2\n1,1,1,2\n";
    assert!(matches!(io::read_trajectory(dup.as_bytes()), Err(Error::Format(_))));
    let bad = "t,k,x,y\n1,1,abc,2\n";
    assert!(matches!(io::read_trajectory(bad.as_bytes()), Err(Error::Csv(_))));
}

#[test]
fn block_matrix_binary_round_trip_is_exact() {
    let efim = toy_efim();
    let mut buf = Vec::new();
    io::write_block_matrix_bin(&mut buf, &efim).unwrap();
    assert_eq!(buf.len(), 16 + 8 * efim.dim() * efim.dim());
    assert_eq!(&buf[..8], &(efim.n_steps as u64).to_le_bytes());
    let back = io::read_block_matrix_bin(buf.as_slice()).unwrap();
    assert_eq!(back, efim);
    assert!(matches!(io::read_block_matrix_bin(&buf[..buf.len() - 8]), Err(Error::Format(_))));
}

#[test]
fn block_matrix_csv_round_trip_is_exact() {
    let efim = toy_efim();
    let mut buf = Vec::new();
    io::write_block_matrix_csv(&mut buf, &efim).unwrap();
    let back = io::read_block_matrix_csv(buf.as_slice(), efim.n_steps, efim.n_users).unwrap();
    assert_eq!(back.data, efim.data);
}

#[test]
fn ragged_dense_csv_is_rejected() {
    assert!(io::read_dense("1,2\n3\n".as_bytes()).is_err());
    let m = io::read_dense("1, 2\n3,4\n".as_bytes()).unwrap();
    assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
}

#[test]
fn stationary_json_round_trip() {
    let input: io::StationaryInput = serde_json::from_str(r#"{"M": [[1, 0], [0, 1]], "T": [[1, 0], [0, 1]]}"#).unwrap();
    let (m, t) = input.matrices().unwrap();
    let sp = recursive::stationary_point(&m, &t).unwrap();
    let json = serde_json::to_string(&io::StationaryJson::from(&sp)).unwrap();
    let back: io::StationaryJson = serde_json::from_str(&json).unwrap();
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((back.j_star[0][0] - golden).abs() < 1e-12);
    assert_eq!(back.j_star[0][1], 0.0);
    assert!(back.residual < 1e-12);
    assert!(json.contains("\"J_star\""));
}

#[test]
fn stationary_input_shapes_are_checked() {
    let ragged: io::StationaryInput = serde_json::from_str(r#"{"M": [[1, 0]], "T": [[1]]}"#).unwrap();
    assert!(matches!(ragged.matrices(), Err(Error::Format(_))));
    let mismatch: io::StationaryInput = serde_json::from_str(r#"{"M": [[1]], "T": [[1, 0], [0, 1]]}"#).unwrap();
    assert!(matches!(mismatch.matrices(), Err(Error::Format(_))));
}

#[test]
fn recursion_csv_has_one_row_per_step() {
    let c = baseline();
    let traj = Trajectory::stationary(&c);
    let meas = fim::measurement_fim(&c, &traj).unwrap();
    let prior = fim::prior_fim(&PriorModel::from_config(&c).unwrap(), &[traj]).unwrap();
    let states = recursive::run_recursion(&meas, &prior).unwrap();
    let mut buf = Vec::new();
    io::write_recursion(&mut buf, &states).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,bcrb_mean,eoc_mean,condition_satisfied,slack");
    assert_eq!(lines.len(), c.num_steps + 1);
    assert!(lines[1].starts_with("1,"));
}
