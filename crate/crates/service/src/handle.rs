//! Async front door to the engine. Any number of tasks may hold a
//! [`ServiceHandle`]; commands funnel into one queue drained by a single
//! writer thread, queries read the latest applied state directly.

use std::sync::Arc;

use parking_lot::RwLock;
use spms_core::{BillId, BillingRecord, LotId, ParkingSession, Reservation, ReservationId, SessionId, SlotId, UnixSeconds, UserId};
use tokio::sync::{broadcast, mpsc, oneshot};
use tracing::error;

use crate::auth;
use crate::clock::Clock;
use crate::command::{Command, Event, Reply};
use crate::engine::{Committed, Engine, EngineError};
use crate::error::ServiceError;
use crate::query;
use crate::state::{ServiceState, User};

type Job = (Command, oneshot::Sender<Result<Committed, String>>);

/// An MQTT publish requested by a committed command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Effect {
    pub seq: u64,
    pub topic: String,
    pub payload: String,
}

#[derive(Debug, Clone)]
pub struct BookingRequest {
    pub lot_id: LotId,
    pub slot_id: Option<SlotId>,
    pub window_start: UnixSeconds,
    pub window_end: UnixSeconds,
    pub eta: Option<UnixSeconds>,
    pub idempotency_key: Option<String>,
}

#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Job>,
    state: Arc<RwLock<ServiceState>>,
    clock: Arc<dyn Clock>,
    effects: broadcast::Sender<Effect>,
    password_rounds: u32,
    dummy_hash: Arc<String>,
}

impl ServiceHandle {
    /// Moves the engine onto its writer thread.
    pub fn start(mut engine: Engine, password_rounds: u32) -> ServiceHandle {
        let (tx, mut rx) = mpsc::channel::<Job>(1024);
        let (effects, _) = broadcast::channel(1024);
        let handle = ServiceHandle {
            tx,
            state: engine.state(),
            clock: engine.clock(),
            effects: effects.clone(),
            password_rounds,
            dummy_hash: Arc::new(auth::dummy_hash(password_rounds)),
        };
        std::thread::Builder::new()
            .name("spms-writer".into())
            .spawn(move || {
                while let Some((cmd, reply)) = rx.blocking_recv() {
                    let result = engine.submit(cmd);
                    if let Ok(c) = &result {
                        for ev in &c.applied.events {
                            if let Some((topic, payload)) = ev.publish() {
                                // No subscriber is fine: there may be no broker.
                                let _ = effects.send(Effect { seq: c.seq, topic, payload });
                            }
                        }
                    }
                    let _ = reply.send(result.map_err(|e: EngineError| {
                        error!("command not committed: {e}");
                        e.to_string()
                    }));
                }
            })
            .expect("spawn writer thread");
        handle
    }

    pub fn subscribe_effects(&self) -> broadcast::Receiver<Effect> {
        self.effects.subscribe()
    }

    pub fn now(&self) -> UnixSeconds {
        self.clock.now()
    }

    /// Runs `f` against the latest applied state.
    pub fn read<T>(&self, f: impl FnOnce(&ServiceState) -> T) -> T {
        f(&self.state.read())
    }

    pub async fn submit(&self, cmd: Command) -> Result<Committed, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.tx
            .send((cmd, tx))
            .await
            .map_err(|_| ServiceError::Internal("writer stopped".into()))?;
        rx.await
            .map_err(|_| ServiceError::Internal("writer stopped".into()))?
            .map_err(ServiceError::Internal)
    }

    async fn run(&self, cmd: Command) -> Result<Reply, ServiceError> {
        self.submit(cmd).await?.applied.outcome
    }

    async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ServiceError> {
        tokio::task::spawn_blocking(f)
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))
    }

    pub async fn register(&self, name: &str, email: &str, phone: &str, password: &str) -> Result<User, ServiceError> {
        if !auth::password_is_strong_enough(password) {
            return Err(ServiceError::WeakPassword);
        }
        let (password, rounds) = (password.to_owned(), self.password_rounds);
        let password_hash = Self::blocking(move || auth::hash_password(&password, rounds)).await?;
        let cmd = Command::RegisterUser {
            name: name.to_owned(),
            email: email.to_owned(),
            phone: phone.to_owned(),
            password_hash,
        };
        match self.run(cmd).await? {
            Reply::User { user } => Ok(user),
            other => Err(unexpected(other)),
        }
    }

    /// Returns the bearer token and its expiry. Unknown email and wrong
    /// password fail identically and take the same work.
    pub async fn login(&self, email: &str, password: &str) -> Result<(String, UnixSeconds), ServiceError> {
        let found = self.read(|s| s.user_by_email(email).map(|u| (u.user_id.clone(), u.password_hash.clone())));
        let (user_id, hash) = match found {
            Some((id, h)) => (Some(id), h),
            None => (None, self.dummy_hash.as_str().to_owned()),
        };
        let password = password.to_owned();
        let hash_for_check = hash.clone();
        let ok = Self::blocking(move || auth::verify_password(&password, &hash_for_check)).await?;
        let Some(user_id) = user_id.filter(|_| ok) else {
            return Err(ServiceError::InvalidCredentials);
        };
        let token = auth::new_token();
        let cmd = Command::Login { user_id, password_hash: hash, token_digest: auth::token_digest(&token) };
        match self.run(cmd).await? {
            Reply::Token { expires_at, .. } => Ok((token, expires_at)),
            other => Err(unexpected(other)),
        }
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId, ServiceError> {
        let digest = auth::token_digest(token);
        let now = self.now();
        self.read(|s| {
            s.tokens
                .get(&digest)
                .filter(|t| t.expires_at > now)
                .map(|t| t.user_id.clone())
                .ok_or(ServiceError::Unauthorized)
        })
    }

    /// Always succeeds; the code goes to the outbox only if the email is
    /// registered.
    pub async fn request_password_reset(&self, email: &str) -> Result<(), ServiceError> {
        let cmd = Command::ResetPassword { email: email.to_owned(), code: auth::new_reset_code() };
        self.run(cmd).await.map(|_| ())
    }

    pub async fn redeem_password_reset(&self, code: &str, new_password: &str) -> Result<(), ServiceError> {
        if !auth::password_is_strong_enough(new_password) {
            return Err(ServiceError::WeakPassword);
        }
        let (password, rounds) = (new_password.to_owned(), self.password_rounds);
        let new_password_hash = Self::blocking(move || auth::hash_password(&password, rounds)).await?;
        self.run(Command::RedeemReset { code: code.trim().to_owned(), new_password_hash }).await.map(|_| ())
    }

    /// Returns the reservation and whether it was an idempotent replay.
    pub async fn create_reservation(&self, user_id: &UserId, req: BookingRequest) -> Result<(Reservation, bool), ServiceError> {
        let cmd = Command::CreateReservation {
            user_id: user_id.clone(),
            lot_id: req.lot_id,
            slot_id: req.slot_id,
            window_start: req.window_start,
            window_end: req.window_end,
            eta: req.eta,
            idempotency_key: req.idempotency_key,
        };
        match self.run(cmd).await? {
            Reply::Reservation { reservation, replayed } => Ok((reservation, replayed)),
            other => Err(unexpected(other)),
        }
    }

    pub async fn cancel_reservation(&self, user_id: &UserId, reservation_id: &ReservationId) -> Result<Reservation, ServiceError> {
        let cmd = Command::CancelReservation { user_id: user_id.clone(), reservation_id: reservation_id.clone() };
        match self.run(cmd).await? {
            Reply::Reservation { reservation, .. } => Ok(reservation),
            other => Err(unexpected(other)),
        }
    }

    pub async fn add_extra(&self, user_id: &UserId, session_id: &SessionId, code: &str) -> Result<ParkingSession, ServiceError> {
        let cmd = Command::AddExtra { user_id: user_id.clone(), session_id: session_id.clone(), code: code.to_owned() };
        match self.run(cmd).await? {
            Reply::Session { session } => Ok(session),
            other => Err(unexpected(other)),
        }
    }

    pub async fn tick(&self) -> Result<Vec<Event>, ServiceError> {
        Ok(self.submit(Command::TimerTick).await?.applied.events)
    }

    pub fn search_lots(&self, lat: f64, lon: f64, radius_m: f64) -> Result<Vec<query::LotHit>, ServiceError> {
        self.read(|s| query::search_lots(s, lat, lon, radius_m))
    }

    pub fn list_slots(&self, lot_id: &LotId) -> Result<Vec<query::SlotView>, ServiceError> {
        let now = self.now();
        self.read(|s| query::list_slots(s, lot_id, now))
    }

    pub fn reservation(&self, user_id: &UserId, id: &ReservationId) -> Result<Reservation, ServiceError> {
        self.read(|s| query::reservation_for(s, user_id, id))
    }

    pub fn my_reservations(&self, user_id: &UserId) -> Vec<Reservation> {
        self.read(|s| query::reservations_of(s, user_id))
    }

    pub fn bill(&self, user_id: &UserId, id: &BillId) -> Result<BillingRecord, ServiceError> {
        self.read(|s| query::bill_for(s, user_id, id))
    }
}

fn unexpected(reply: Reply) -> ServiceError {
    ServiceError::Internal(format!("unexpected reply {reply:?}"))
}
