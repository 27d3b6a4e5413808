// Browser wiring: session dashboard, captive portal and policy editor on one
// page. All consistency is enforced server-side; this file only renders and
// forwards clicks.

import { ApiClient } from "./api.js";
import { SessionDashboard, SessionRow } from "./dashboard.js";
import { CaptivePortal } from "./portal.js";
import { PolicyEditor } from "./policy.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function renderRows(
  dashboard: SessionDashboard,
  tbody: HTMLTableSectionElement,
  rows: SessionRow[],
): void {
  tbody.replaceChildren();
  for (const row of rows) {
    const tr = document.createElement("tr");
    for (const text of [row.sessionId, row.user, row.deviceClass, row.zone,
                        row.state, row.lastReason]) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    const actions = document.createElement("td");
    for (const action of row.actions) {
      const button = document.createElement("button");
      button.textContent = action;
      button.addEventListener("click", async () => {
        const outcome = await dashboard.invoke(row.sessionId, action);
        if (!outcome.ok) {
          const note = document.createElement("span");
          note.className = "row-error";
          note.textContent = ` ${outcome.status ?? ""} ${outcome.error ?? "failed"}`;
          actions.appendChild(note);
        }
        void dashboard.refresh();
      });
      actions.appendChild(button);
    }
    tr.appendChild(actions);
    tbody.appendChild(tr);
  }
}

function setupPortal(client: ApiClient): void {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  const container = el<HTMLDivElement>("portal");
  if (sessionId === null) {
    container.textContent = "no quarantined session in URL (expected ?session=...)";
    return;
  }
  const portal = new CaptivePortal(client, sessionId);
  const status = el<HTMLParagraphElement>("portal-status");

  const render = async () => {
    const state = await portal.load();
    status.textContent = `${state.phase}: ${state.message}`;
    const list = el<HTMLUListElement>("portal-items");
    list.replaceChildren();
    for (const item of state.items) {
      const li = document.createElement("li");
      li.textContent = `${item.check_id}: ${item.instruction}`;
      list.appendChild(li);
    }
    el<HTMLButtonElement>("portal-remediate").onclick = async () => {
      const after = await portal.remediate(state.items);
      status.textContent = `${after.phase}: ${after.message}`;
    };
  };

  el<HTMLButtonElement>("portal-register").onclick = async () => {
    const after = await portal.register({
      name: el<HTMLInputElement>("guest-name").value,
      email: el<HTMLInputElement>("guest-email").value,
      sponsor: el<HTMLInputElement>("guest-sponsor").value,
      expiry_ms: Date.now() + 24 * 3600 * 1000,
    });
    status.textContent = `${after.phase}: ${after.message}`;
  };
  void render();
}

function setupPolicyEditor(client: ApiClient): void {
  const editor = new PolicyEditor(client);
  const textarea = el<HTMLTextAreaElement>("policy-text");
  const issues = el<HTMLUListElement>("policy-issues");
  void editor.loadFirewall().then((text) => {
    textarea.value = text;
  });
  el<HTMLButtonElement>("policy-apply").onclick = async () => {
    const result = await editor.applyFirewall(textarea.value);
    issues.replaceChildren();
    if (result.applied) {
      const li = document.createElement("li");
      li.textContent = `applied (${result.rules} rules)`;
      issues.appendChild(li);
      return;
    }
    for (const issue of result.issues) {
      const li = document.createElement("li");
      li.className = "row-error";
      li.textContent = `line ${issue.line}: ${issue.field}: ${issue.message}`;
      issues.appendChild(li);
    }
  };
}

function start(): void {
  const base = (window as unknown as { NACPDP_BASE_URL?: string }).NACPDP_BASE_URL
    ?? "http://127.0.0.1:8080";
  const client = new ApiClient(base);
  const banner = el<HTMLDivElement>("banner");
  const dashboard = new SessionDashboard(client, {
    pollMs: 2000,
    onRows: (rows) => {
      banner.hidden = true;
      renderRows(dashboard, el<HTMLTableSectionElement>("session-rows"), rows);
    },
    onError: (message) => {
      banner.hidden = false;
      banner.textContent = `service unreachable, retrying: ${message}`;
    },
  });
  dashboard.start();
  setupPortal(client);
  setupPolicyEditor(client);
}

document.addEventListener("DOMContentLoaded", start);
