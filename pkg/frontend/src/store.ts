// Session store: the single source of truth the page renders from.
//
// Every displayed number originates from a service response tagged with the
// state version it came from; responses older than what is already shown
// are discarded, so the display is monotone in version even when network
// timing reorders replies.  Slider input is coalesced: at most one
// mutation is in flight, and newer values replace any queued one.

import { AnalysisPayload, ApiClient, ProfilePayload, StatePayload } from "./api.js";

export interface HistoryPoint {
  version: number;
  separation_m: number | null;
  width_m: number | null;
}

export interface ViewState {
  connected: boolean;
  version: number;           // version of the displayed results
  stateVersion: number;      // latest accepted mutation on the service
  busy: boolean;
  pending: boolean;          // a mutation from this page is in flight
  currents: [number, number, number];
  iComp: [number, number, number];
  analysis: AnalysisPayload;
  profile: ProfilePayload | null;
  frameUrl: string | null;
  history: HistoryPoint[];
  lastError: string | null;
}

type Listener = (state: ViewState) => void;

export class SessionStore {
  private state: ViewState = {
    connected: false,
    version: -1,
    stateVersion: -1,
    busy: false,
    pending: false,
    currents: [0, 0, 0],
    iComp: [0, 0, 0],
    analysis: { status: "none" },
    profile: null,
    frameUrl: null,
    history: [],
    lastError: null,
  };
  private listeners: Listener[] = [];
  private queued: [number, number, number] | null = null;
  private inFlight = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private readonly client: ApiClient) {}

  get view(): ViewState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  /** Apply a state payload unless something newer is already displayed. */
  private applyState(payload: StatePayload): boolean {
    if (payload.result_version < this.state.version) {
      return false; // stale response: a newer result is already on screen
    }
    const fresh = payload.result_version > this.state.version;
    this.emit({
      connected: true,
      version: payload.result_version,
      stateVersion: Math.max(payload.version, this.state.stateVersion),
      busy: payload.busy,
      currents: payload.currents_a,
      iComp: payload.i_comp_a,
      analysis: payload.analysis,
      lastError: null,
    });
    if (fresh && payload.has_frames) {
      this.recordHistory(payload.analysis, payload.result_version);
    }
    return fresh;
  }

  private recordHistory(analysis: AnalysisPayload, version: number): void {
    if (this.state.history.some((h) => h.version === version)) return;
    this.emit({
      history: [
        ...this.state.history,
        {
          version,
          separation_m: analysis.separation_m ?? null,
          width_m: analysis.feature_width_m ?? null,
        },
      ].slice(-400),
    });
  }

  /** Poll once; fetches the profile and frame URL when the version moved. */
  async refresh(): Promise<void> {
    let payload: StatePayload;
    try {
      payload = await this.client.getState();
    } catch (err) {
      this.emit({ connected: false, lastError: String(err) });
      return;
    }
    const fresh = this.applyState(payload);
    if (fresh && payload.has_frames) {
      try {
        const profile = await this.client.getProfile();
        if (profile.version >= this.state.version) {
          this.emit({
            profile,
            frameUrl: this.client.frameUrl("diff", profile.version),
          });
        }
      } catch (err) {
        this.emit({ lastError: String(err) });
      }
    }
  }

  startPolling(intervalMs = 500): void {
    this.stopPolling();
    this.timer = setInterval(() => void this.refresh(), intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Slider handler: coalesce rapid moves into at most one in-flight PUT. */
  setCurrents(ix: number, iy: number, iz: number): Promise<void> {
    this.queued = [ix, iy, iz];
    if (this.inFlight) {
      return Promise.resolve();
    }
    return this.drainQueue();
  }

  /** Resolves when the queue is empty and the last response was applied. */
  async drainQueue(): Promise<void> {
    while (this.queued !== null) {
      const next = this.queued;
      this.queued = null;
      this.inFlight = true;
      this.emit({ pending: true });
      try {
        const payload = await this.client.putCurrents(next[0], next[1], next[2]);
        this.applyState(payload);
        if (payload.has_frames) {
          const profile = await this.client.getProfile();
          if (profile.version >= this.state.version) {
            this.emit({
              profile,
              frameUrl: this.client.frameUrl("diff", profile.version),
            });
          }
        }
      } catch (err) {
        this.emit({ lastError: String(err) });
      } finally {
        this.inFlight = false;
      }
    }
    this.emit({ pending: false });
  }

  async autoNull(sweeps = 2, atoms?: number): Promise<void> {
    this.emit({ pending: true });
    try {
      await this.client.postNull(sweeps, atoms);
      await this.refresh();
    } catch (err) {
      this.emit({ lastError: String(err) });
    } finally {
      this.emit({ pending: false });
    }
  }
}

/** Human-oriented field readout: value, bound, or status text. */
export function fieldReadout(analysis: AnalysisPayload): string {
  if (analysis.status === "resolved" && analysis.b_gauss != null) {
    const mg = analysis.b_gauss * 1e3;
    const err = (analysis.b_err_gauss ?? 0) * 1e3;
    return `|B| = ${mg.toFixed(2)} ± ${err.toFixed(2)} mG`;
  }
  if (analysis.status === "unresolved") {
    if (analysis.b_upper_bound_gauss != null) {
      return `|B| ≤ ${(analysis.b_upper_bound_gauss * 1e3).toFixed(2)} mG (unresolved)`;
    }
    return "unresolved";
  }
  if (analysis.status === "failed") {
    return "fit failed";
  }
  return "no data";
}
