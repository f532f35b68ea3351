//! Line protocol for driving the link from an external traffic source.
//!
//! Requests are `PKT <time_us> <prio> <len> <hex>`; every request gets one
//! response line, `RES <time_us> <ok|collision|crc_fail>` or `ERR <reason>`.
//! A packet is split into transport blocks sent on consecutive occurrences
//! of the vehicle's SPS grant while background vehicles contend for the same
//! pool.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::Allocation;
use crate::link::{derive_stream, LinkSimulator};
use crate::mac_sps::{Network, ThresholdTable};
use crate::phy_tx::transport_block_bits;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficEvent {
    pub arrival_time_us: u64,
    pub priority: u8,
    pub payload: Vec<u8>,
}

impl TrafficEvent {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketStatus {
    Ok,
    Collision,
    CrcFail,
}

impl PacketStatus {
    pub fn name(self) -> &'static str {
        match self {
            PacketStatus::Ok => "ok",
            PacketStatus::Collision => "collision",
            PacketStatus::CrcFail => "crc_fail",
        }
    }
}

/// Parses one `PKT` request.
pub fn parse_request(line: &str) -> Result<TrafficEvent> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let err = |m: &str| Error::Parse(m.to_string());
    match parts.first() {
        Some(&"PKT") => {}
        Some(other) => return Err(Error::Parse(format!("unknown request {other:?}"))),
        None => return Err(err("empty line")),
    }
    // A zero-length packet has no hex field.
    if !(parts.len() == 5 || (parts.len() == 4 && parts[3] == "0")) {
        return Err(err("expected PKT <time_us> <prio> <len> <hex>"));
    }
    let time: u64 = parts[1].parse().map_err(|_| err("bad time_us"))?;
    let priority: u8 = parts[2].parse().map_err(|_| err("bad priority"))?;
    if priority > 7 {
        return Err(err("priority must be 0-7"));
    }
    let len: usize = parts[3].parse().map_err(|_| err("bad length"))?;
    let payload = match parts.get(4) {
        Some(h) => decode_hex(h)?,
        None => Vec::new(),
    };
    if payload.len() != len {
        return Err(Error::Parse(format!(
            "length {len} but {} payload bytes",
            payload.len()
        )));
    }
    Ok(TrafficEvent {
        arrival_time_us: time,
        priority,
        payload,
    })
}

fn decode_hex(s: &str) -> Result<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return Err(Error::Parse("odd number of hex digits".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            s.get(i..i + 2)
                .and_then(|b| u8::from_str_radix(b, 16).ok())
                .ok_or_else(|| Error::Parse(format!("bad hex at offset {i}")))
        })
        .collect()
}

pub fn format_response(time_us: u64, status: PacketStatus) -> String {
    format!("RES {time_us} {}", status.name())
}

pub fn format_error(reason: &str) -> String {
    // Keep the response on one line.
    format!("ERR {}", reason.replace(['\n', '\r'], " "))
}

/// Transport blocks needed for `payload_bytes` at `tbs_bits` per block.
pub fn blocks_needed(payload_bytes: usize, tbs_bits: usize) -> usize {
    (payload_bytes * 8).div_ceil(tbs_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketOutcome {
    pub status: PacketStatus,
    pub n_blocks: usize,
    /// Subframe of the last block.
    pub finished_subframe: u64,
}

/// Our vehicle is the first one of an abstract-mode SPS network; the rest
/// transmit continuously in the background.
pub struct TrafficAdapter {
    cfg: ExperimentConfig,
    net: Network,
    links: HashMap<Allocation, LinkSimulator>,
    last_time_us: Option<u64>,
    n_packets: u64,
}

impl TrafficAdapter {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.sps.n_vehicles[0];
        let mut net_cfg = cfg.network(
            n,
            cfg.sps.policies[0],
            derive_stream(cfg.master_seed, &[0x7AF]),
        );
        net_cfg.mode = crate::mac_sps::PhyMode::Abstract;
        // Background receptions are not reported, so their threshold is moot.
        let thresholds = ThresholdTable::from_points(&[(net_cfg.mcs, f64::NEG_INFINITY)]);
        let mut net = Network::new(net_cfg, thresholds)?;
        net.vehicles_mut()[0].has_traffic = false;
        Ok(Self {
            cfg: cfg.clone(),
            net,
            links: HashMap::new(),
            last_time_us: None,
            n_packets: 0,
        })
    }

    fn link(&mut self, alloc: Allocation) -> Result<&LinkSimulator> {
        if !self.links.contains_key(&alloc) {
            let mut sc = self.cfg.link.clone();
            sc.grid.n_subchannels = self.cfg.pool.n_subchannels;
            sc.allocation = alloc;
            sc.block_interval = 1;
            self.links.insert(alloc, LinkSimulator::new(sc)?);
        }
        Ok(&self.links[&alloc])
    }

    /// Current transport block size of our grant.
    pub fn current_tbs(&self) -> Result<usize> {
        let mut grid = self.cfg.link.grid.clone();
        grid.n_subchannels = self.cfg.pool.n_subchannels;
        transport_block_bits(
            &grid,
            &self.net.vehicles()[0].grant.allocation(),
            self.cfg.traffic.mcs,
        )
    }

    /// Sends one packet and reports how it went.
    pub fn process(&mut self, ev: &TrafficEvent) -> Result<PacketOutcome> {
        if let Some(last) = self.last_time_us {
            if ev.arrival_time_us < last {
                return Err(Error::Parse(format!(
                    "arrival {} before previous {last}",
                    ev.arrival_time_us
                )));
            }
        }
        self.last_time_us = Some(ev.arrival_time_us);
        let packet = self.n_packets;
        self.n_packets += 1;

        let n_blocks = blocks_needed(ev.payload_len(), self.current_tbs()?).max(1);
        let start = ev.arrival_time_us.div_ceil(1000);
        while self.net.subframe() < start {
            self.net.step()?;
        }
        self.net.vehicles_mut()[0].has_traffic = true;
        let our_id = self.net.vehicles()[0].id;
        let seed = derive_stream(self.cfg.master_seed, &[0x7AF, packet]);
        let (power, mcs) = (self.cfg.traffic.tx_power_dbm, self.cfg.traffic.mcs);
        let mut status = PacketStatus::Ok;
        let mut sent = 0;
        let mut finished = start;
        while sent < n_blocks {
            let alloc = self.net.vehicles()[0].grant.allocation();
            let subframe = self.net.subframe();
            let records = self.net.step()?;
            let Some(rec) = records.iter().find(|r| r.vehicle == our_id) else {
                continue;
            };
            sent += 1;
            finished = subframe;
            if rec.collided {
                status = PacketStatus::Collision;
            } else if status == PacketStatus::Ok {
                let outcome = self.link(alloc)?.run_block(seed, mcs, power, subframe)?;
                if !outcome.success {
                    status = PacketStatus::CrcFail;
                }
            }
        }
        self.net.vehicles_mut()[0].has_traffic = false;
        Ok(PacketOutcome {
            status,
            n_blocks,
            finished_subframe: finished,
        })
    }

    /// Handles one request line; malformed input yields an `ERR` line.
    pub fn handle_line(&mut self, line: &str) -> String {
        match parse_request(line).and_then(|ev| self.process(&ev).map(|o| (ev, o))) {
            Ok((ev, o)) => format_response(ev.arrival_time_us, o.status),
            Err(e) => format_error(&e.to_string()),
        }
    }
}

/// Answers every non-blank request line until end of input.
pub fn serve<R: BufRead, W: Write>(
    adapter: &mut TrafficAdapter,
    input: R,
    mut output: W,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", adapter.handle_line(&line))?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelConfig, ChannelModel, ImpairmentConfig};

    #[test]
    fn parses_a_request() {
        let ev = parse_request("PKT 1000 3 8 DEADBEEFDEADBEEF").unwrap();
        assert_eq!(ev.arrival_time_us, 1000);
        assert_eq!(ev.priority, 3);
        assert_eq!(ev.payload_len(), 8);
        assert_eq!(ev.payload[..4], [0xDE, 0xAD, 0xBE, 0xEF]);
        assert_eq!(parse_request("PKT 5 0 0").unwrap().payload_len(), 0);
    }

    #[test]
    fn rejects_malformed_requests() {
        for bad in [
            "",
            "PKG 1 1 1 00",
            "PKT 1 1 2 00",
            "PKT 1 9 1 00",
            "PKT x 1 1 00",
            "PKT 1 1 1 0",
            "PKT 1 1 1 zz",
            "PKT 1 1 1",
        ] {
            assert!(parse_request(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn segmentation_rounds_up() {
        assert_eq!(blocks_needed(300, 32), 75);
        assert_eq!(blocks_needed(4, 32), 1);
        assert_eq!(blocks_needed(5, 32), 2);
    }

    fn quiet_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.link.channel = ChannelConfig::with_model(ChannelModel::Ideal);
        cfg.link.impairments = ImpairmentConfig::none();
        cfg.pool.selection_period_ms = 1;
        cfg.sps.n_vehicles = vec![1];
        cfg.sps.width = 1;
        cfg.traffic.mcs = 0;
        cfg
    }

    #[test]
    fn long_packet_uses_one_block_per_grant() {
        let mut a = TrafficAdapter::new(&quiet_cfg()).unwrap();
        assert_eq!(a.current_tbs().unwrap(), 32);
        let ev = TrafficEvent {
            arrival_time_us: 1000,
            priority: 3,
            payload: vec![0xA5; 300],
        };
        let o = a.process(&ev).unwrap();
        assert_eq!(o.n_blocks, 75);
        assert_eq!(o.status, PacketStatus::Ok);
        // Period 1 ms: blocks go out back to back from subframe 1.
        assert_eq!(o.finished_subframe, 75);
    }

    #[test]
    fn stream_survives_errors() {
        let mut a = TrafficAdapter::new(&quiet_cfg()).unwrap();
        let input = "PKT 2000 1 2 ABCD\n\nPKT 1000 1 1 00\ngarbage\nPKT 3000 0 1 FF\n";
        let mut out = Vec::new();
        serve(&mut a, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<String> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "RES 2000 ok");
        assert!(lines[1].starts_with("ERR "), "{}", lines[1]);
        assert!(lines[2].starts_with("ERR "));
        assert_eq!(lines[3], "RES 3000 ok");
    }

    #[test]
    fn full_pool_reports_collisions() {
        let mut cfg = quiet_cfg();
        // Two vehicles on one sub-channel every subframe: always collide.
        cfg.pool.n_subchannels = 1;
        cfg.link.allocation = Allocation::new(0, 1);
        cfg.sps.n_vehicles = vec![2];
        let mut a = TrafficAdapter::new(&cfg).unwrap();
        assert_eq!(a.handle_line("PKT 0 0 4 00000000"), "RES 0 collision");
    }

    #[test]
    fn low_power_reports_crc_failures() {
        let mut cfg = quiet_cfg();
        cfg.link.channel = ChannelConfig::with_model(ChannelModel::Awgn);
        cfg.traffic.tx_power_dbm = -60.0;
        let mut a = TrafficAdapter::new(&cfg).unwrap();
        assert_eq!(a.handle_line("PKT 0 0 4 00000000"), "RES 0 crc_fail");
    }
}
