import { GatewayClient } from "./api.js";
import { ChatView } from "./chatView.js";
import { HistorySidebar } from "./historySidebar.js";
import { InstructorDashboard } from "./dashboard.js";
import { KeyPanel } from "./keyPanel.js";
import { SessionState } from "./session.js";
import type { CourseInfo } from "./types.js";

/**
 * Assembles the single-page app: login (signed assertion from the identity
 * provider), course picker, then chat + sidebar, with dashboard and key
 * panel tabs. Everything speaks to the gateway through GatewayClient only.
 */
export class App {
  readonly session = new SessionState();
  readonly client: GatewayClient;
  chat: ChatView | null = null;
  sidebar: HistorySidebar | null = null;
  dashboard: InstructorDashboard | null = null;
  keyPanel: KeyPanel | null = null;

  constructor(
    baseUrl: string,
    readonly root: HTMLElement,
  ) {
    this.client = new GatewayClient(baseUrl, this.session);
    this.renderLogin();
  }

  private renderLogin(): void {
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();
    const box = doc.createElement("div");
    box.className = "login-box";
    const heading = doc.createElement("h2");
    heading.textContent = "Sign in";
    const hint = doc.createElement("p");
    hint.textContent = "Paste the signed login assertion from your identity provider.";
    const field = doc.createElement("textarea");
    field.rows = 3;
    field.className = "assertion";
    const button = doc.createElement("button");
    button.textContent = "Log in";
    const error = doc.createElement("p");
    error.className = "login-error";
    error.hidden = true;
    button.addEventListener("click", () => {
      void this.login(field.value.trim()).catch((err) => {
        error.textContent = err instanceof Error ? err.message : String(err);
        error.hidden = false;
      });
    });
    box.append(heading, hint, field, button, error);
    this.root.appendChild(box);
  }

  async login(assertion: string): Promise<void> {
    await this.client.login(assertion);
    const courses = await this.client.myCourses();
    this.renderCoursePicker(courses);
  }

  private renderCoursePicker(courses: CourseInfo[]): void {
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();
    const box = doc.createElement("div");
    box.className = "course-picker";
    const heading = doc.createElement("h2");
    heading.textContent = `Welcome, ${this.session.user?.display_name ?? ""}`;
    box.appendChild(heading);
    if (courses.length === 0) {
      const none = doc.createElement("p");
      none.textContent = "You are not enrolled in any course yet.";
      box.appendChild(none);
    }
    for (const course of courses) {
      const button = doc.createElement("button");
      button.className = "course-option";
      button.dataset.id = course.id;
      button.textContent = `${course.name} (${course.mode}, ${course.role})`;
      button.addEventListener("click", () => this.selectCourse(course));
      box.appendChild(button);
    }
    this.root.appendChild(box);
  }

  selectCourse(course: CourseInfo): void {
    this.session.activeCourse = course;
    this.session.activeConversationId = null;
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();

    const layout = doc.createElement("div");
    layout.className = "layout";
    const sidebarMount = doc.createElement("aside");
    const main = doc.createElement("main");
    const chatMount = doc.createElement("section");
    const dashboardMount = doc.createElement("section");
    const keyMount = doc.createElement("section");
    main.append(chatMount, dashboardMount, keyMount);
    layout.append(sidebarMount, main);
    this.root.appendChild(layout);

    this.chat = new ChatView(this.client, this.session, chatMount);
    this.sidebar = new HistorySidebar(this.client, this.session, sidebarMount, (id) => {
      void this.chat?.loadConversation(id);
    });
    this.dashboard = new InstructorDashboard(this.client, this.session, dashboardMount);
    this.keyPanel = new KeyPanel(this.client, this.session, keyMount);

    void this.sidebar.refresh();
    void this.keyPanel.refreshList();
    if (course.role === "instructor" || course.role === "admin") {
      void this.dashboard.refresh();
    } else {
      dashboardMount.hidden = true;
    }
  }
}

export function mountApp(baseUrl: string, root: HTMLElement): App {
  return new App(baseUrl, root);
}
