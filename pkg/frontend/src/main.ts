import { ApiClient, ApiError } from './api.js';
import { ResultsPanel } from './results.js';
import { SelectionState } from './selection.js';
import { StudyFlow, RUBRIC_ROWS } from './study.js';
import { Manifest, QueryResult } from './types.js';
import { TileRequestTracker, ViewerState, tileKey } from './viewer.js';

const api = new ApiClient('');
const viewer = new ViewerState();
const selection = new SelectionState();
const results = new ResultsPanel();
const study = new StudyFlow(api);

let manifest: Manifest | null = null;
const tiles = new Map<string, HTMLImageElement>();
const tracker = new TileRequestTracker();
let queryEpoch = 0; // cancels superseded in-flight queries

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const canvas = el<HTMLCanvasElement>('viewer');
const ctx = canvas.getContext('2d')!;

function requestTiles(): void {
  const wanted = viewer.visibleTiles(canvas.width, canvas.height);
  for (const t of tracker.newRequests(wanted)) {
    const img = new Image();
    img.onload = () => {
      tiles.set(tileKey(t), img);
      draw();
    };
    img.onerror = () => tracker.forget(t); // placeholder stays
    img.src = api.tileUrl(t.slideId, t.downsample, t.tx, t.ty);
  }
}

function draw(): void {
  ctx.fillStyle = '#555';
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!viewer.slide) {
    return;
  }
  const t = viewer.tileSize;
  for (const addr of viewer.visibleTiles(canvas.width, canvas.height)) {
    const img = tiles.get(tileKey(addr));
    const origin = viewer.baseToScreen(
      addr.tx * t * addr.downsample, addr.ty * t * addr.downsample,
      canvas.width, canvas.height,
    );
    if (img) {
      ctx.drawImage(img, origin.x, origin.y);
    } else {
      ctx.fillStyle = '#777'; // placeholder for missing / loading tiles
      ctx.fillRect(origin.x, origin.y, t, t);
    }
  }
  if (selection.rect) {
    const a = viewer.baseToScreen(selection.rect.x, selection.rect.y,
                                  canvas.width, canvas.height);
    const w = selection.rect.w / viewer.level;
    const h = selection.rect.h / viewer.level;
    ctx.strokeStyle = selection.isValid(viewer.level) ? '#2e2' : '#e22';
    ctx.lineWidth = 2;
    ctx.strokeRect(a.x, a.y, w, h);
  }
  el('status').textContent =
    `${viewer.magnificationName()}  center ` +
    `(${Math.round(viewer.centerX)}, ${Math.round(viewer.centerY)})`;
  updateSearchButton();
}

function updateSearchButton(): void {
  const button = el<HTMLButtonElement>('search');
  button.disabled = !selection.isValid(viewer.level);
  el('size-hint').textContent = selection.sizeHint(viewer.level);
}

function redrawAfterViewChange(): void {
  requestTiles();
  draw();
}

// --- viewer interactions -------------------------------------------------

let panStart: { x: number; y: number } | null = null;
let selecting = false;

canvas.addEventListener('mousedown', (ev) => {
  const rect = canvas.getBoundingClientRect();
  const sx = ev.clientX - rect.left;
  const sy = ev.clientY - rect.top;
  if (ev.shiftKey) {
    const base = viewer.screenToBase(sx, sy, canvas.width, canvas.height);
    selection.startDrag(base.x, base.y, viewer.level);
    selecting = true;
  } else {
    panStart = { x: sx, y: sy };
  }
});

canvas.addEventListener('mousemove', (ev) => {
  const rect = canvas.getBoundingClientRect();
  const sx = ev.clientX - rect.left;
  const sy = ev.clientY - rect.top;
  if (selecting) {
    const base = viewer.screenToBase(sx, sy, canvas.width, canvas.height);
    selection.dragTo(base.x, base.y, viewer.level);
    draw();
  } else if (panStart) {
    viewer.pan(sx - panStart.x, sy - panStart.y);
    panStart = { x: sx, y: sy };
    redrawAfterViewChange();
  }
});

window.addEventListener('mouseup', () => {
  panStart = null;
  if (selecting) {
    selection.endDrag();
    selecting = false;
    draw();
  }
});

el('zoom-in').addEventListener('click', () => {
  viewer.zoomIn();
  selection.clear();
  redrawAfterViewChange();
});
el('zoom-out').addEventListener('click', () => {
  viewer.zoomOut();
  selection.clear();
  redrawAfterViewChange();
});

// --- query / results ------------------------------------------------------

async function runQuery(): Promise<void> {
  const k = parseInt(el<HTMLInputElement>('k').value, 10) || 5;
  const body = selection.toQueryBody(viewer, k);
  const epoch = ++queryEpoch;
  el('results-note').textContent = 'searching…';
  try {
    const resp = await api.query(body);
    if (epoch !== queryEpoch) {
      return; // superseded by a newer query
    }
    results.setResults(resp.results, resp.exhausted);
    renderResults();
  } catch (err) {
    if (epoch !== queryEpoch) {
      return;
    }
    el('results-note').textContent =
      err instanceof ApiError ? err.body : String(err);
  }
}

function renderResults(): void {
  const list = el('results');
  list.innerHTML = '';
  results.results.forEach((r: QueryResult, i: number) => {
    const item = document.createElement('div');
    item.className = 'result';
    const img = document.createElement('img');
    img.src = r.thumbnail_url;
    img.width = 96;
    img.height = 96;
    const meta = document.createElement('div');
    meta.textContent =
      `#${r.rank} slide ${r.slide_id} ${r.magnification} ` +
      `(${r.x}, ${r.y})` +
      (r.distance !== null ? ` d=${r.distance.toFixed(4)}` : '');
    item.append(img, meta);
    item.addEventListener('click', () => {
      const magnified = results.magnify(i);
      if (magnified) {
        const big = el<HTMLImageElement>('magnified');
        big.src = magnified.thumbnail_url;
        big.style.display = 'block';
      }
      const target = results.jumpTarget(i);
      if (target && manifest
          && target.slideId === viewer.slide?.slide_id) {
        viewer.level = target.downsample;
        viewer.centerX = target.centerX;
        viewer.centerY = target.centerY;
        redrawAfterViewChange();
      }
    });
    list.append(item);
  });
  el('results-note').textContent = results.exhausted
    ? 'fewer diverse results than requested'
    : `${results.results.length} results`;
}

el('search').addEventListener('click', () => {
  void runQuery();
});

// --- study mode -----------------------------------------------------------

function renderStudy(): void {
  const panel = el('study-panel');
  panel.innerHTML = '';
  if (study.done) {
    panel.textContent = 'Session complete — close it to see aggregates.';
    return;
  }
  const q = study.current;
  if (!q) {
    return;
  }
  const progress = study.progress();
  const head = document.createElement('div');
  head.textContent =
    `Query ${progress.done + 1} of ${progress.total} (${q.scoring})`;
  panel.append(head);
  const queryImg = document.createElement('img');
  queryImg.src = q.query_image_url!;
  queryImg.width = 128;
  queryImg.height = 128;
  panel.append(queryImg);

  for (const slot of q.results ?? []) {
    const row = document.createElement('div');
    row.className = 'study-row';
    const img = document.createElement('img');
    img.src = slot.image_url;
    img.width = 96;
    img.height = 96;
    row.append(img);
    for (const score of study.scale()) {
      const btn = document.createElement('button');
      btn.textContent = String(score);
      if (q.scoring === 'rubric' && typeof score === 'number') {
        const rubric = RUBRIC_ROWS.find((r) => r.score === score);
        if (rubric) {
          btn.title = rubric.text;
        }
      }
      btn.addEventListener('click', async () => {
        await study.rate(slot.result_index, score);
        row.classList.add('rated');
        el<HTMLButtonElement>('study-next').disabled =
          !study.canAdvance();
      });
      row.append(btn);
    }
    panel.append(row);
  }
  if (q.scoring === 'rubric') {
    const legend = document.createElement('ul');
    for (const row of RUBRIC_ROWS) {
      const li = document.createElement('li');
      li.textContent = `${row.score}: ${row.text}`;
      legend.append(li);
    }
    panel.append(legend);
  }
  el<HTMLButtonElement>('study-next').disabled = !study.canAdvance();
}

el('study-start').addEventListener('click', async () => {
  const scoring = el<HTMLSelectElement>('study-scoring').value;
  await study.start({
    rater_id: el<HTMLInputElement>('rater').value || 'anonymous',
    n_queries: parseInt(el<HTMLInputElement>('study-n').value, 10) || 20,
    scoring,
    seed: parseInt(el<HTMLInputElement>('study-seed').value, 10) || 0,
  });
  renderStudy();
});

el('study-next').addEventListener('click', async () => {
  await study.advance();
  renderStudy();
});

el('study-close').addEventListener('click', async () => {
  const summary = await study.close();
  el('study-panel').textContent = JSON.stringify(summary, null, 2);
});

window.addEventListener('beforeunload', (ev) => {
  if (study.hasUnsavedRatings()) {
    ev.preventDefault(); // block navigation with unsaved ratings
  }
});

// --- boot -----------------------------------------------------------------

async function boot(): Promise<void> {
  manifest = await api.slides();
  const select = el<HTMLSelectElement>('slide');
  select.innerHTML = '';
  for (const s of manifest.slides) {
    const opt = document.createElement('option');
    opt.value = String(s.slide_id);
    opt.textContent = `${s.slide_id}: ${s.name}`;
    select.append(opt);
  }
  const open = () => {
    tiles.clear();
    tracker.reset();
    selection.clear();
    viewer.setManifest(manifest!, parseInt(select.value, 10));
    redrawAfterViewChange();
  };
  select.addEventListener('change', open);
  if (manifest.slides.length > 0) {
    open();
  }
}

void boot();
