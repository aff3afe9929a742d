import { ApiError } from "./api.js";
import type { GatewayClient } from "./api.js";
import type { SessionState } from "./session.js";

function dayWindow(daysBack: number): { from: string; to: string; label: string } {
  // daysBack=1 is today: [today 00:00 UTC, tomorrow 00:00 UTC)
  const start = new Date();
  start.setUTCHours(0, 0, 0, 0);
  start.setUTCDate(start.getUTCDate() - (daysBack - 1));
  const end = new Date(start);
  end.setUTCDate(end.getUTCDate() + 1);
  return {
    from: start.toISOString(),
    to: end.toISOString(),
    label: start.toISOString().slice(0, 10),
  };
}

/**
 * Instructor view: member roster, remaining-budget gauge, and a small
 * per-day token chart built from course-scoped usage queries. Students get
 * the access-denied state (the gateway answers 403).
 */
export class InstructorDashboard {
  readonly membersTable: HTMLElement;
  readonly budgetGauge: HTMLElement;
  readonly usageChart: HTMLElement;
  readonly deniedView: HTMLElement;

  private inFlight: Promise<void> | null = null;

  constructor(
    private client: GatewayClient,
    private session: SessionState,
    readonly root: HTMLElement,
    private chartDays = 7,
  ) {
    const doc = root.ownerDocument;
    root.classList.add("instructor-dashboard");
    this.deniedView = doc.createElement("div");
    this.deniedView.className = "access-denied";
    this.deniedView.textContent = "You don't have access to this course's dashboard.";
    this.deniedView.hidden = true;
    this.membersTable = doc.createElement("table");
    this.membersTable.className = "members";
    this.budgetGauge = doc.createElement("div");
    this.budgetGauge.className = "budget-gauge";
    this.usageChart = doc.createElement("div");
    this.usageChart.className = "usage-chart";
    root.append(this.deniedView, this.membersTable, this.budgetGauge, this.usageChart);
  }

  async refresh(): Promise<void> {
    // serialize refreshes so overlapping calls can't double-render
    while (this.inFlight) await this.inFlight.catch(() => {});
    this.inFlight = this.doRefresh();
    try {
      await this.inFlight;
    } finally {
      this.inFlight = null;
    }
  }

  private async doRefresh(): Promise<void> {
    const course = this.session.activeCourse;
    if (!course) return;
    const doc = this.root.ownerDocument;
    try {
      const [members, budget] = await Promise.all([
        this.client.listMembers(course.id),
        this.client.getBudget(course.id),
      ]);
      this.deniedView.hidden = true;

      this.membersTable.replaceChildren();
      const head = doc.createElement("tr");
      head.innerHTML = "<th>Name</th><th>Email</th><th>Role</th>";
      this.membersTable.appendChild(head);
      for (const member of members) {
        const row = doc.createElement("tr");
        row.className = "member-row";
        const name = doc.createElement("td");
        name.textContent = member.display_name;
        const email = doc.createElement("td");
        email.textContent = member.email;
        const role = doc.createElement("td");
        role.textContent = member.role;
        row.append(name, email, role);
        this.membersTable.appendChild(row);
      }

      const remaining =
        budget.limit_microcredits - budget.spent_microcredits - budget.reserved_microcredits;
      const fraction =
        budget.limit_microcredits > 0 ? remaining / budget.limit_microcredits : 0;
      this.budgetGauge.dataset.remaining = String(remaining);
      this.budgetGauge.innerHTML =
        `<span class="gauge-bar" style="width:${Math.round(fraction * 100)}%"></span>` +
        `<span class="gauge-label">${remaining.toLocaleString("en-US")} µc remaining ` +
        `of ${budget.limit_microcredits.toLocaleString("en-US")}</span>`;

      this.usageChart.replaceChildren();
      const windows = Array.from({ length: this.chartDays }, (_, i) =>
        dayWindow(this.chartDays - i),
      );
      const reports = await Promise.all(
        windows.map((w) => this.client.usage(w.from, w.to, course.id)),
      );
      const totals = reports.map((r) => r.tokens.total!.total!);
      const peak = Math.max(1, ...totals);
      windows.forEach((w, i) => {
        const bar = doc.createElement("div");
        bar.className = "chart-bar";
        bar.dataset.day = w.label;
        bar.dataset.tokens = String(totals[i]);
        bar.style.height = `${Math.round((totals[i]! / peak) * 100)}%`;
        bar.title = `${w.label}: ${totals[i]} tokens`;
        this.usageChart.appendChild(bar);
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 403) {
        this.deniedView.hidden = false;
        this.membersTable.replaceChildren();
        this.budgetGauge.replaceChildren();
        this.usageChart.replaceChildren();
        return;
      }
      throw err;
    }
  }
}
