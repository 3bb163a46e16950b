//! HTTP/JSON gateway. Handlers translate requests into service calls;
//! mutations go through the service's command queue and every response
//! waits for the command to be committed.

pub mod dto;
pub mod error;

use std::future::Future;
use std::path::PathBuf;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use spms_core::{BillId, LotId, Reservation, ReservationId, SessionId, UserId};
use spms_service::{query, BookingRequest, ServiceHandle};
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub use error::ApiError;

use dto::*;

pub const DEFAULT_LISTEN: &str = "0.0.0.0:8080";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub service: ServiceHandle,
}

/// Builds the router. `static_dir`, if given, is served under `/app`.
pub fn router(service: ServiceHandle, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/users", post(register))
        .route("/sessions", post(login))
        .route("/password-resets", post(request_reset))
        .route("/password-resets/redeem", post(redeem_reset))
        .route("/lots", get(search_lots))
        .route("/lots/{lot_id}/slots", get(list_slots))
        .route("/reservations", post(create_reservation))
        .route("/reservations/{id}", get(get_reservation).delete(cancel_reservation))
        .route("/sessions-of-parking/{id}/extras", post(add_extra))
        .route("/bills/{id}", get(get_bill))
        .route("/me/reservations", get(my_reservations));
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(dir) = static_dir {
        app = app.nest_service("/app", ServeDir::new(dir));
    }
    app.fallback(|| async { ApiError::not_found() })
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(AppState { service })
}

pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// The caller behind `Authorization: Bearer <token>`.
pub struct Caller(pub UserId);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(ApiError::unauthorized)?;
        Ok(Caller(state.service.authenticate(token)?))
    }
}

/// JSON body whose rejections use the API error shape.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::bad_body(e.body_text()))
    }
}

pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| Params(v))
            .map_err(|e: QueryRejection| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e.body_text())
            })
    }
}

async fn register(State(st): State<AppState>, Body(b): Body<RegisterBody>) -> ApiResult<Response> {
    let user = st.service.register(&b.name, &b.email, &b.phone, &b.password).await?;
    Ok((StatusCode::CREATED, Json(UserOut::from(user))).into_response())
}

async fn login(State(st): State<AppState>, Body(b): Body<LoginBody>) -> ApiResult<Response> {
    let (token, expires_at) = st.service.login(&b.email, &b.password).await?;
    let user_id = st.service.authenticate(&token)?;
    Ok((StatusCode::CREATED, Json(TokenOut { token, user_id, expires_at })).into_response())
}

/// Accepted whether or not the email is registered.
async fn request_reset(State(st): State<AppState>, Body(b): Body<ResetBody>) -> ApiResult<StatusCode> {
    st.service.request_password_reset(&b.email).await?;
    Ok(StatusCode::ACCEPTED)
}

async fn redeem_reset(State(st): State<AppState>, Body(b): Body<RedeemBody>) -> ApiResult<StatusCode> {
    st.service.redeem_password_reset(&b.code, &b.new_password).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn search_lots(State(st): State<AppState>, Params(q): Params<SearchQuery>) -> ApiResult<Json<Vec<LotOut>>> {
    let hits = st.service.search_lots(q.lat, q.lon, q.radius_m)?;
    Ok(Json(hits.into_iter().map(LotOut::from).collect()))
}

async fn list_slots(State(st): State<AppState>, Path(lot_id): Path<String>) -> ApiResult<Json<Vec<SlotOut>>> {
    Ok(Json(st.service.list_slots(&LotId::from(lot_id))?))
}

fn reservation_out(service: &ServiceHandle, r: Reservation) -> ReservationOut {
    let (session, bill) = service.read(|s| {
        (
            query::session_of_reservation(s, &r.reservation_id).map(|x| x.session_id.clone()),
            query::bill_of_reservation(s, &r.reservation_id).map(|b| b.bill_id.clone()),
        )
    });
    ReservationOut::new(r, session, bill)
}

async fn create_reservation(
    State(st): State<AppState>,
    Caller(user): Caller,
    headers: HeaderMap,
    Body(b): Body<ReservationBody>,
) -> ApiResult<Response> {
    let idempotency_key = match headers.get(IDEMPOTENCY_HEADER) {
        None => None,
        Some(v) => Some(
            v.to_str()
                .ok()
                .filter(|k| !k.is_empty() && k.len() <= 128)
                .ok_or_else(|| {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_idempotency_key", "unusable Idempotency-Key")
                })?
                .to_owned(),
        ),
    };
    let req = BookingRequest {
        lot_id: b.lot_id,
        slot_id: b.slot_id,
        window_start: b.window_start,
        window_end: b.window_end,
        eta: b.eta,
        idempotency_key,
    };
    let (r, replayed) = st.service.create_reservation(&user, req).await?;
    let status = if replayed { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(reservation_out(&st.service, r))).into_response())
}

async fn get_reservation(
    State(st): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<ReservationOut>> {
    let r = st.service.reservation(&user, &ReservationId::from(id))?;
    Ok(Json(reservation_out(&st.service, r)))
}

async fn cancel_reservation(
    State(st): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<ReservationOut>> {
    let r = st.service.cancel_reservation(&user, &ReservationId::from(id)).await?;
    Ok(Json(reservation_out(&st.service, r)))
}

async fn my_reservations(State(st): State<AppState>, Caller(user): Caller) -> Json<Vec<ReservationOut>> {
    let list = st.service.my_reservations(&user);
    Json(list.into_iter().map(|r| reservation_out(&st.service, r)).collect())
}

async fn add_extra(
    State(st): State<AppState>,
    Caller(user): Caller,
    Path(id): Path<String>,
    Body(b): Body<ExtraBody>,
) -> ApiResult<Json<SessionOut>> {
    let session = st.service.add_extra(&user, &SessionId::from(id), &b.code).await?;
    let currency = st
        .service
        .read(|s| s.tariff_for(&session.lot_id).map(|t| t.currency_code.clone()))
        .unwrap_or_default();
    Ok(Json(SessionOut::new(session, &currency)))
}

async fn get_bill(State(st): State<AppState>, Caller(user): Caller, Path(id): Path<String>) -> ApiResult<Json<BillOut>> {
    Ok(Json(BillOut::from(st.service.bill(&user, &BillId::from(id))?)))
}
