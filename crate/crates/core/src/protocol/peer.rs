//! Query handling and the lockstep session between two camera peers.

use std::io::Write;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PeerConfig;
use crate::database::{DatabaseError, ViewDatabase};
use crate::features::FrameFeatures;
use crate::geometry::verify_matches;
use crate::matching::IndexContext;
use crate::registry::Strategies;
use crate::vocab::Vocabulary;

use super::schedule::should_share;
use super::transport::Endpoint;
use super::wire::{Message, QueryMessage, ReplyMessage, WireError};

/// RANSAC seed for a query, so that every query gets its own reproducible stream.
pub fn query_seed(cfg: &PeerConfig, query: &QueryMessage) -> u64 {
    cfg.seed ^ (u64::from(query.camera_id) << 40) ^ u64::from(query.frame_index)
}

/// Answers a partner's query against the local database. Never mutates `db`.
pub fn handle_query(
    db: &ViewDatabase,
    vocabulary: &Vocabulary,
    query: &QueryMessage,
    cfg: &PeerConfig,
    strategies: &Strategies,
) -> ReplyMessage {
    if query.features.len() <= cfg.min_matches {
        return ReplyMessage::no_match();
    }
    let (bow, _) = vocabulary.transform(&query.features);
    let Some(candidate) = db.query(&bow, &cfg.query_params()) else {
        return ReplyMessage::no_match();
    };
    if !cfg.geometric_validation {
        return ReplyMessage::matched(candidate.matched_frame, 0);
    }
    let stored = db
        .get(candidate.matched_frame)
        .expect("candidate frames come from the database");
    let matches = strategies.matcher.match_features(
        &query.features,
        &stored.features,
        Some(IndexContext {
            vocabulary,
            candidate_index: &stored.direct_index,
        }),
        &cfg.match_params(),
    );
    let result = verify_matches(
        strategies.estimator.as_ref(),
        strategies.metric.as_ref(),
        &query.features,
        &stored.features,
        &matches,
        &cfg.ransac_params(),
        query_seed(cfg, query),
    );
    if result.accepted {
        let count = u16::try_from(result.inliers.len()).unwrap_or(u16::MAX);
        ReplyMessage::matched(candidate.matched_frame, count)
    } else {
        ReplyMessage::no_match()
    }
}

/// One round of the local sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: u32,
    pub frame_index: u32,
    /// Whether this round sent a query (otherwise a heartbeat).
    pub shared: bool,
    pub feature_count: u32,
    pub reply: ReplyMessage,
}

/// A request from the partner and the reply sent back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsweredEntry {
    pub partner_frame: u32,
    pub query: bool,
    pub reply: ReplyMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionLog {
    pub camera_id: u8,
    /// False when the session ended before both sequences finished.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Hash of the run manifest that produced this log, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub rounds: Vec<RoundEntry>,
    pub answered: Vec<AnsweredEntry>,
}

impl RecognitionLog {
    pub fn new(camera_id: u8) -> Self {
        RecognitionLog {
            camera_id,
            complete: false,
            error: None,
            manifest: None,
            rounds: Vec::new(),
            answered: Vec::new(),
        }
    }

    /// Rounds that sent a query and received a MATCH or NO_MATCH answer.
    pub fn query_events(&self) -> impl Iterator<Item = &RoundEntry> + '_ {
        self.rounds
            .iter()
            .filter(|e| e.shared && e.reply.status != super::ReplyStatus::Initialising)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum PeerError {
    #[error("session aborted: {reason}")]
    Session {
        reason: String,
        log: Box<RecognitionLog>,
    },
    #[error(transparent)]
    Database(#[from] DatabaseError),
}

impl PeerError {
    /// The partial log, when the session got under way.
    pub fn log(&self) -> Option<&RecognitionLog> {
        match self {
            PeerError::Session { log, .. } => Some(log),
            PeerError::Database(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    /// Drop the channel without FIN after this many rounds (simulates a killed peer).
    pub abort_after: Option<u32>,
}

struct Session<'a> {
    cfg: &'a PeerConfig,
    vocabulary: &'a Vocabulary,
    strategies: &'a Strategies,
    db: ViewDatabase,
    reader: Box<dyn std::io::Read + Send>,
    outbox: mpsc::Sender<Vec<u8>>,
    log: RecognitionLog,
    partner_requests: u32,
    partner_done: bool,
}

impl Session<'_> {
    fn fail(&mut self, reason: impl Into<String>) -> PeerError {
        let reason = reason.into();
        let mut log = std::mem::replace(&mut self.log, RecognitionLog::new(self.cfg.camera_id));
        log.complete = false;
        log.error = Some(reason.clone());
        PeerError::Session {
            reason,
            log: Box::new(log),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), PeerError> {
        if self.outbox.send(msg.encode()).is_err() {
            return Err(self.fail("channel closed while sending"));
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<Message, PeerError> {
        match Message::read_from(&mut self.reader, self.cfg.max_features) {
            Ok(m) => Ok(m),
            Err(WireError::Format(crate::io::FormatError::Truncated)) => {
                Err(self.fail("channel closed by partner"))
            }
            Err(e) => Err(self.fail(format!("protocol error: {e}"))),
        }
    }

    /// Answers a partner request, or records a FIN. Returns the reply to our own request
    /// if `msg` is one.
    fn dispatch(&mut self, msg: Message, pending: Option<u32>) -> Result<Option<ReplyMessage>, PeerError> {
        let me = self.cfg.camera_id;
        match msg {
            Message::Query(q) => {
                let reply = handle_query(&self.db, self.vocabulary, &q, self.cfg, self.strategies);
                self.log.answered.push(AnsweredEntry {
                    partner_frame: q.frame_index,
                    query: true,
                    reply,
                });
                self.partner_requests += 1;
                self.send(&Message::Reply {
                    camera_id: me,
                    frame_index: q.frame_index,
                    reply,
                })?;
                Ok(None)
            }
            Message::Heartbeat { frame_index, .. } => {
                let reply = ReplyMessage::initialising();
                self.log.answered.push(AnsweredEntry {
                    partner_frame: frame_index,
                    query: false,
                    reply,
                });
                self.partner_requests += 1;
                self.send(&Message::Reply {
                    camera_id: me,
                    frame_index,
                    reply,
                })?;
                Ok(None)
            }
            Message::Fin { .. } => {
                self.partner_done = true;
                Ok(None)
            }
            Message::Reply {
                frame_index, reply, ..
            } => match pending {
                Some(expected) if expected == frame_index => {
                    if let Some(m) = reply.matched_frame {
                        log::debug!("camera {me} frame {frame_index}: partner matched frame {m}");
                    }
                    Ok(Some(reply))
                }
                _ => Err(self.fail(format!(
                    "unsolicited reply for frame {frame_index} (outstanding: {pending:?})"
                ))),
            },
        }
    }

    fn round(&mut self, round: u32, frame: FrameFeatures) -> Result<(), PeerError> {
        let mut frame = frame;
        frame.features.truncate(self.cfg.max_features);
        let t = frame.frame_index;
        let (bow, direct_index) = self.vocabulary.transform(&frame);
        let feature_count = frame.len() as u32;
        let shared = should_share(t, self.cfg.init_window, self.cfg.rate, self.cfg.share_rate);
        let request = if shared {
            Message::Query(QueryMessage {
                camera_id: self.cfg.camera_id,
                frame_index: t,
                features: frame.clone(),
            })
        } else {
            Message::Heartbeat {
                camera_id: self.cfg.camera_id,
                frame_index: t,
            }
        };
        self.db.add(t, bow, frame, direct_index)?;
        self.send(&request)?;

        let mut reply = None;
        while reply.is_none() || !(self.partner_done || self.partner_requests > round) {
            let msg = self.receive()?;
            if let Some(r) = self.dispatch(msg, reply.is_none().then_some(t))? {
                reply = Some(r);
            }
        }
        self.log.rounds.push(RoundEntry {
            round,
            frame_index: t,
            shared,
            feature_count,
            reply: reply.expect("loop exits with a reply"),
        });
        Ok(())
    }
}

/// Runs one camera over its frame sequence, exchanging one request and one reply with the
/// partner per frame, then serves the partner until it also finishes.
pub fn run_peer<I>(
    cfg: &PeerConfig,
    vocabulary: &Vocabulary,
    strategies: &Strategies,
    frames: I,
    endpoint: Endpoint,
    options: &SessionOptions,
) -> Result<RecognitionLog, PeerError>
where
    I: IntoIterator<Item = FrameFeatures>,
{
    let Endpoint { reader, mut writer } = endpoint;
    let (outbox, inbox) = mpsc::channel::<Vec<u8>>();
    let writer_thread = thread::spawn(move || {
        for bytes in inbox {
            if writer.write_all(&bytes).and_then(|_| writer.flush()).is_err() {
                break;
            }
        }
    });

    let mut session = Session {
        cfg,
        vocabulary,
        strategies,
        db: ViewDatabase::new(),
        reader,
        outbox,
        log: RecognitionLog::new(cfg.camera_id),
        partner_requests: 0,
        partner_done: false,
    };

    let result = (|| {
        let mut last_frame = 0;
        for (round, frame) in frames.into_iter().enumerate() {
            let round = round as u32;
            if options.abort_after == Some(round) {
                return Err(session.fail(format!("aborted after {round} rounds")));
            }
            last_frame = frame.frame_index;
            session.round(round, frame)?;
        }
        session.send(&Message::Fin {
            camera_id: cfg.camera_id,
            frame_index: last_frame,
        })?;
        while !session.partner_done {
            let msg = session.receive()?;
            session.dispatch(msg, None)?;
        }
        session.log.complete = true;
        Ok(std::mem::replace(&mut session.log, RecognitionLog::new(cfg.camera_id)))
    })();

    let Session { reader, outbox, .. } = session;
    drop(outbox);
    let _ = writer_thread.join();
    drop(reader);
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Descriptor, InterestPoint, LocalFeature};
    use crate::protocol::transport::duplex_pipe;
    use crate::protocol::ReplyStatus;
    use crate::vocab::build_vocabulary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, index: u32, n: usize) -> FrameFeatures {
        let features = (0..n)
            .map(|_| LocalFeature {
                point: InterestPoint::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)),
                descriptor: Descriptor::from_words(rng.gen()),
            })
            .collect();
        FrameFeatures::new(index, features)
    }

    fn small_vocab(seed: u64) -> Vocabulary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<Descriptor> = (0..400).map(|_| Descriptor::from_words(rng.gen())).collect();
        build_vocabulary(&corpus, 4, 3, seed).unwrap()
    }

    #[test]
    fn small_query_is_no_match() {
        let vocab = small_vocab(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut db = ViewDatabase::new();
        let stored = random_frame(&mut rng, 0, 5);
        let (bow, di) = vocab.transform(&stored);
        db.add(0, bow, stored.clone(), di).unwrap();
        let q = QueryMessage {
            camera_id: 2,
            frame_index: 0,
            features: stored,
        };
        let reply = handle_query(&db, &vocab, &q, &PeerConfig::default(), &Strategies::default());
        assert_eq!(reply, ReplyMessage::no_match());
    }

    #[test]
    fn empty_database_is_no_match() {
        let vocab = small_vocab(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = QueryMessage {
            camera_id: 2,
            frame_index: 0,
            features: random_frame(&mut rng, 0, 100),
        };
        let reply = handle_query(
            &ViewDatabase::new(),
            &vocab,
            &q,
            &PeerConfig::default(),
            &Strategies::default(),
        );
        assert_eq!(reply.status, ReplyStatus::NoMatch);
    }

    fn run_pair(
        a: Vec<FrameFeatures>,
        b: Vec<FrameFeatures>,
        abort_b: Option<u32>,
    ) -> (Result<RecognitionLog, PeerError>, Result<RecognitionLog, PeerError>) {
        let vocab = small_vocab(4);
        let cfg = PeerConfig {
            init_window: 3,
            ..PeerConfig::default()
        };
        let (ea, eb) = duplex_pipe();
        let strategies = Strategies::default();
        thread::scope(|s| {
            let cfg2 = cfg.with_camera(2);
            let (vocab, strategies) = (&vocab, &strategies);
            let hb = s.spawn(move || {
                run_peer(
                    &cfg2,
                    vocab,
                    strategies,
                    b,
                    eb,
                    &SessionOptions {
                        abort_after: abort_b,
                    },
                )
            });
            let ra = run_peer(&cfg, vocab, strategies, a, ea, &SessionOptions::default());
            (ra, hb.join().unwrap())
        })
    }

    fn sequence(seed: u64, len: u32) -> Vec<FrameFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|t| random_frame(&mut rng, t, 30)).collect()
    }

    #[test]
    fn lockstep_rounds_alternate() {
        let (a, b) = run_pair(sequence(5, 20), sequence(6, 20), None);
        let (a, b) = (a.unwrap(), b.unwrap());
        for log in [&a, &b] {
            assert!(log.complete);
            assert_eq!(log.rounds.len(), 20);
            assert_eq!(log.answered.len(), 20);
            for (i, e) in log.rounds.iter().enumerate() {
                assert_eq!(e.round, i as u32);
                assert_eq!(e.shared, should_share(e.frame_index, 3, 30, 6));
                if !e.shared {
                    assert_eq!(e.reply.status, ReplyStatus::Initialising);
                }
            }
        }
        // every request of one side is answered by the other, in order
        let sent: Vec<u32> = a.rounds.iter().map(|e| e.frame_index).collect();
        let answered: Vec<u32> = b.answered.iter().map(|e| e.partner_frame).collect();
        assert_eq!(sent, answered);
        let replies: Vec<ReplyMessage> = a.rounds.iter().map(|e| e.reply).collect();
        let given: Vec<ReplyMessage> = b.answered.iter().map(|e| e.reply).collect();
        assert_eq!(replies, given);
    }

    #[test]
    fn shorter_peer_keeps_serving() {
        let (a, b) = run_pair(sequence(7, 10), sequence(8, 25), None);
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.rounds.len(), 10);
        assert_eq!(b.rounds.len(), 25);
        assert_eq!(a.answered.len(), 25);
        assert!(a.complete && b.complete);
    }

    #[test]
    fn killed_peer_leaves_partial_logs() {
        let (a, b) = run_pair(sequence(9, 20), sequence(10, 20), Some(8));
        let ea = a.unwrap_err();
        let eb = b.unwrap_err();
        let (la, lb) = (ea.log().unwrap(), eb.log().unwrap());
        assert!(!la.complete && !lb.complete);
        assert_eq!(lb.rounds.len(), 8);
        assert!(la.rounds.len() >= 8 && la.rounds.len() < 20);
        assert!(la.error.is_some());
    }

    #[test]
    fn log_json_round_trip() {
        let (a, _) = run_pair(sequence(11, 8), sequence(12, 8), None);
        let a = a.unwrap();
        assert_eq!(RecognitionLog::from_json(&a.to_json()).unwrap(), a);
    }
}
