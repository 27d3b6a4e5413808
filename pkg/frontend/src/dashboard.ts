// Live session table: poll, derive rows, dispatch admin actions. Conflicts
// (another admin raced us) come back as 409s and are surfaced inline on the
// row instead of breaking the dashboard.

import { ApiClient, ApiError, SessionDTO } from "./api.js";
import { AdminAction, availableActions } from "./actions.js";

export interface SessionRow {
  sessionId: string;
  user: string;
  deviceClass: string;
  zone: string;
  state: string;
  lastReason: string;
  actions: readonly AdminAction[];
}

export interface ActionOutcome {
  ok: boolean;
  session?: SessionDTO;
  error?: string;
  status?: number;
}

export function toRow(dto: SessionDTO): SessionRow {
  return {
    sessionId: dto.session_id,
    user: dto.user.display_name || dto.user.user_id,
    deviceClass: dto.device.device_class,
    zone: dto.location.zone,
    state: dto.state,
    lastReason: dto.last_reason,
    actions: availableActions(dto.state),
  };
}

export interface DashboardOptions {
  pollMs?: number;
  onRows?: (rows: SessionRow[]) => void;
  onError?: (message: string) => void;
}

export class SessionDashboard {
  private timer: ReturnType<typeof setInterval> | null = null;
  readonly pollMs: number;
  private readonly onRows: (rows: SessionRow[]) => void;
  private readonly onError: (message: string) => void;

  constructor(
    private readonly client: ApiClient,
    options: DashboardOptions = {},
  ) {
    this.pollMs = options.pollMs ?? 2000;
    this.onRows = options.onRows ?? (() => undefined);
    this.onError = options.onError ?? (() => undefined);
  }

  async refresh(): Promise<SessionRow[]> {
    try {
      const rows = (await this.client.listSessions()).map(toRow);
      this.onRows(rows);
      return rows;
    } catch (err) {
      this.onError(err instanceof Error ? err.message : String(err));
      throw err;
    }
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    void this.refresh().catch(() => undefined);
    this.timer = setInterval(() => {
      void this.refresh().catch(() => undefined);
    }, this.pollMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async invoke(
    sessionId: string,
    action: AdminAction,
    params: Record<string, string> = {},
  ): Promise<ActionOutcome> {
    try {
      const session = await this.client.sessionAction(sessionId, action, params);
      return { ok: true, session };
    } catch (err) {
      if (err instanceof ApiError) {
        return { ok: false, status: err.status, error: err.message };
      }
      return { ok: false, error: err instanceof Error ? err.message : String(err) };
    }
  }
}
