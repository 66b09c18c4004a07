/**
 * Browser entry: side-by-side panorama pane and model pane, pair table,
 * optimize button. This file is DOM wiring only; the behavior lives in the
 * testable modules (view, rays, session, pairsTable).
 */

import { AnnotationApi } from "./api.js";
import { clickToRay } from "./rays.js";
import { SessionController } from "./session.js";
import { pairRows } from "./pairsTable.js";
import { ViewState } from "./view.js";
import type { Vec3 } from "./types.js";

const HELP_NOTE =
  "Tip: place points only on the corners of the building roof - roof geometry is the most reliable part of the model.";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const api = new AnnotationApi("");
  const viewpoints = await api.viewpoints();
  if (viewpoints.length === 0) {
    document.body.textContent = "no viewpoints configured";
    return;
  }
  const params = new URLSearchParams(window.location.search);
  const panoId = params.get("pano") ?? viewpoints[0].pano_id;
  const session = new SessionController(api, panoId);
  await session.refresh();

  const viewState = new ViewState();
  const panoImg = el<HTMLImageElement>("pano-pane");
  const modelImg = el<HTMLImageElement>("model-pane");
  const table = el<HTMLTableSectionElement>("pair-rows");
  const status = el<HTMLDivElement>("status");
  el<HTMLDivElement>("help").textContent = HELP_NOTE;

  let overlayOn = true;
  let pendingWorld: Vec3 | null = null;

  function refreshImages(): void {
    panoImg.src = api.cropUrl(panoId, viewState.view);
    modelImg.src = overlayOn
      ? api.overlayUrl(panoId, viewState.view)
      : api.cropUrl(panoId, viewState.view);
  }

  function renderTable(): void {
    const snap = session.snapshot();
    table.replaceChildren();
    for (const row of pairRows(snap.pairs, snap.residualsDeg)) {
      const tr = document.createElement("tr");
      const res = row.residualDeg === null ? "-" : row.residualDeg.toFixed(3);
      tr.innerHTML =
        `<td>${row.index}</td><td>${row.u.toFixed(1)}, ${row.v.toFixed(1)}</td>` +
        `<td>${row.world.map((x) => x.toFixed(2)).join(", ")}</td>` +
        `<td style="color:${row.color}">${res}</td>`;
      const del = document.createElement("td");
      const btn = document.createElement("button");
      btn.textContent = "x";
      btn.onclick = () => void session.deletePair(row.index).then(renderTable);
      del.appendChild(btn);
      tr.appendChild(del);
      table.appendChild(tr);
    }
    status.textContent =
      snap.medianDeg === null
        ? `${snap.pairs.length} pairs, not optimized yet`
        : `${snap.pairs.length} pairs, median residual ${snap.medianDeg.toFixed(3)} deg` +
          (snap.converged ? "" : " (not converged)");
  }

  // panorama pane: drag to pan, wheel to zoom, click to place the 2D point
  let dragging = false;
  let last: [number, number] = [0, 0];
  let moved = 0;
  panoImg.onpointerdown = (e) => {
    dragging = true;
    moved = 0;
    last = [e.clientX, e.clientY];
  };
  panoImg.onpointermove = (e) => {
    if (!dragging) return;
    viewState.pan(e.clientX - last[0], e.clientY - last[1]);
    moved += Math.abs(e.clientX - last[0]) + Math.abs(e.clientY - last[1]);
    last = [e.clientX, e.clientY];
    refreshImages();
  };
  panoImg.onpointerup = (e) => {
    dragging = false;
    if (moved > 3) return; // it was a drag, not a click
    if (!pendingWorld) {
      status.textContent = "snap a model vertex first";
      return;
    }
    const rect = panoImg.getBoundingClientRect();
    const { u, v } = viewState.clickToCropPixel(e.clientX, e.clientY, rect);
    const world = pendingWorld;
    pendingWorld = null;
    void session
      .addPairFromClick(viewState.view, u, v, world)
      .then(renderTable);
  };
  panoImg.onwheel = (e) => {
    e.preventDefault();
    viewState.zoom(e.deltaY < 0 ? 1 : -1);
    refreshImages();
  };

  // model pane: click snaps to the nearest visible vertex
  modelImg.onpointerup = (e) => {
    const rect = modelImg.getBoundingClientRect();
    const { u, v } = viewState.clickToCropPixel(e.clientX, e.clientY, rect);
    const ray = clickToRay(viewState.view, u, v);
    void session.snap(ray).then((hit) => {
      if (hit.snapped && hit.world) {
        pendingWorld = hit.world;
        status.textContent = `snapped vertex ${hit.vertex_index}; now click the matching panorama pixel`;
      } else {
        status.textContent = "no vertex within snap radius";
      }
    });
  };

  el<HTMLButtonElement>("optimize").onclick = () => {
    void session.optimize().then(() => {
      renderTable();
      refreshImages(); // overlay moves with the new working pose
    });
  };
  el<HTMLInputElement>("overlay-toggle").onchange = (e) => {
    overlayOn = (e.target as HTMLInputElement).checked;
    refreshImages();
  };

  refreshImages();
  renderTable();
}

if (typeof document !== "undefined") {
  void start();
}
