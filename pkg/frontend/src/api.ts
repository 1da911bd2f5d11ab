// Typed client for the simulator service. All physics numbers come from the
// service; the UI never computes fields itself.

export interface PulseSummary {
  rabi_freq_hz: number;
  duration_s: number;
  start_time_s: number;
  delta12_hz: number;
}

export interface AnalysisPayload {
  status: "none" | "resolved" | "unresolved" | "failed";
  version?: number;
  separation_m?: number | null;
  separation_err_m?: number | null;
  omega_larmor_rad_s?: number | null;
  b_gauss?: number | null;
  b_err_gauss?: number | null;
  b_upper_bound_gauss?: number | null;
  feature_width_m?: number | null;
}

export interface StatePayload {
  version: number;
  result_version: number;
  busy: boolean;
  currents_a: [number, number, number];
  i_comp_a: [number, number, number];
  atom_count: number;
  pulse: PulseSummary;
  b_configured_gauss: number;
  has_frames: boolean;
  analysis: AnalysisPayload;
  history_length: number;
}

export interface ProfilePayload {
  version: number;
  x_meters: number[];
  counts: number[];
  fit_counts?: number[];
}

export interface NullPayload {
  final_currents_a: [number, number, number];
  b_upper_bound_gauss: number | null;
  evaluations: number;
  version: number;
  pending: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = body.detail ?? detail;
      } catch {
        // keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  getState(): Promise<StatePayload> {
    return this.request<StatePayload>("/api/state");
  }

  putCurrents(ix: number, iy: number, iz: number): Promise<StatePayload> {
    return this.request<StatePayload>("/api/currents", {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ix, iy, iz }),
    });
  }

  getAnalysis(): Promise<AnalysisPayload> {
    return this.request<AnalysisPayload>("/api/analysis");
  }

  getProfile(): Promise<ProfilePayload> {
    return this.request<ProfilePayload>("/api/profile?which=diff&format=json");
  }

  postNull(sweeps = 2, atoms?: number): Promise<NullPayload> {
    return this.request<NullPayload>("/api/null", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(atoms ? { sweeps, atoms } : { sweeps }),
    });
  }

  frameUrl(kind: "raw" | "diff", version: number): string {
    return `${this.base}/api/frame?kind=${kind}&format=png&v=${version}`;
  }
}
