// Dashboard wiring: sliders with numeric entry per coil, live difference
// image, cross-section with fit overlay, field readout, and the history
// sparkline.  All values shown come from the service (see store.ts).

import { ApiClient } from "./api.js";
import { drawProfile, drawSparkline } from "./render.js";
import { fieldReadout, SessionStore } from "./store.js";

const AXES = ["x", "y", "z"] as const;
const SLIDER_HALF_RANGE_A = 0.4;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(): SessionStore {
  const client = new ApiClient("");
  const store = new SessionStore(client);

  const sliders = AXES.map((a) => el<HTMLInputElement>(`slider-${a}`));
  const entries = AXES.map((a) => el<HTMLInputElement>(`entry-${a}`));
  const readout = el<HTMLDivElement>("readout");
  const statusLine = el<HTMLDivElement>("status-line");
  const banner = el<HTMLDivElement>("banner");
  const frameImg = el<HTMLImageElement>("frame");
  const profileCanvas = el<HTMLCanvasElement>("profile");
  const sparkCanvas = el<HTMLCanvasElement>("sparkline");
  const nullButton = el<HTMLButtonElement>("auto-null");
  const pendingDot = el<HTMLSpanElement>("pending");

  let editing = false;   // ignore state echoes while the user drags

  function currentInputs(): [number, number, number] {
    return [0, 1, 2].map((k) => Number(entries[k].value) * 1e-3) as [number, number, number];
  }

  function pushCurrents(): void {
    const [ix, iy, iz] = currentInputs();
    void store.setCurrents(ix, iy, iz);
  }

  sliders.forEach((slider, k) => {
    slider.addEventListener("input", () => {
      editing = true;
      entries[k].value = (Number(slider.value) * 1e3).toFixed(1);
      pushCurrents();
    });
    slider.addEventListener("change", () => {
      editing = false;
    });
  });
  entries.forEach((entry, k) => {
    entry.addEventListener("change", () => {
      sliders[k].value = String(Number(entry.value) * 1e-3);
      pushCurrents();
    });
  });

  nullButton.addEventListener("click", () => {
    nullButton.disabled = true;
    void store.autoNull().finally(() => {
      nullButton.disabled = false;
    });
  });

  store.subscribe((state) => {
    banner.hidden = state.connected;
    if (!state.connected) {
      banner.textContent = `service unreachable, retrying… ${state.lastError ?? ""}`;
    }
    pendingDot.hidden = !(state.pending || state.busy);
    readout.textContent = fieldReadout(state.analysis);
    readout.dataset.status = state.analysis.status;
    statusLine.textContent =
      `state v${state.stateVersion} / results v${state.version}` +
      (state.busy ? " (computing)" : "");
    if (!editing) {
      AXES.forEach((_, k) => {
        const amps = state.currents[k];
        sliders[k].min = String(amps - SLIDER_HALF_RANGE_A);
        sliders[k].max = String(amps + SLIDER_HALF_RANGE_A);
        if (document.activeElement !== sliders[k] && document.activeElement !== entries[k]) {
          sliders[k].value = String(amps);
          entries[k].value = (amps * 1e3).toFixed(1);
        }
      });
    }
    if (state.frameUrl && frameImg.src !== state.frameUrl) {
      frameImg.src = state.frameUrl;
    }
    drawProfile(profileCanvas, state.profile);
    drawSparkline(sparkCanvas, state.history);
  });

  store.startPolling(500);
  void store.refresh();
  return store;
}

if (typeof document !== "undefined" && document.getElementById("slider-x")) {
  startApp();
}
